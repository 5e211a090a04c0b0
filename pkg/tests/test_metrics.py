import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_psd
from nfisac.channels import RisState
from nfisac.metrics import (SensingWeights, TransmitDesign, beampattern_gain, cross_correlation, feasibility_report,
                            rate, rate_to_sinr_threshold, sinr, target_pairs, transmit_covariance, worst_case_gain)


def test_transmit_covariance_examples(rng):
    np.testing.assert_array_equal(transmit_covariance([], np.eye(3)), np.eye(3))
    f = np.array([1 + 1j, 2, -1j])
    r = transmit_covariance([f], np.zeros((3, 3)))
    assert np.linalg.matrix_rank(r) == 1
    assert np.trace(r).real == pytest.approx(np.linalg.norm(f) ** 2)
    fs = [rng.standard_normal(4) + 1j * rng.standard_normal(4) for _ in range(3)]
    rs = random_psd(rng, 4)
    r = transmit_covariance(fs, rs)
    assert np.trace(r).real == pytest.approx(sum(np.linalg.norm(v) ** 2 for v in fs) + np.trace(rs).real)
    assert np.abs(r - r.conj().T).max() <= 1e-12 * np.abs(r).max()


def test_transmit_covariance_rejects_non_hermitian():
    with pytest.raises(ValueError):
        transmit_covariance([], np.array([[1, 1], [0, 1]], dtype=complex))
    with pytest.raises(ValueError):
        transmit_covariance([np.ones(3)], np.eye(2))


def test_design_check(rng):
    d = TransmitDesign([np.ones(2)], np.eye(2))
    d.check(p_max=4.0)
    with pytest.raises(ValueError):
        d.check(p_max=3.0)
    with pytest.raises(ValueError):
        TransmitDesign([], -np.eye(2)).check()


def test_sinr_examples(rng):
    h = np.array([1.0, 0.5j])
    assert sinr(0, TransmitDesign([np.zeros(2)], np.zeros((2, 2))), h, 1.0) == 0
    f = np.array([1.0, 0.0])
    assert sinr(0, TransmitDesign([f * np.sqrt(2.0)], np.zeros((2, 2))), h, 2.0) == pytest.approx(1.0)
    f1, f2 = rng.standard_normal(2) + 0j, rng.standard_normal(2) + 0j
    rs = random_psd(rng, 2)
    c, noise = 3.0, 0.7
    d = TransmitDesign([np.sqrt(c) * f1, np.sqrt(c) * f2], c * rs)
    sig = abs(h @ f1) ** 2
    inter = abs(h @ f2) ** 2 + (h @ rs @ h.conj()).real
    assert sinr(0, d, h, noise) == pytest.approx(sig * c / (inter * c + noise), rel=1e-12)
    with pytest.raises(ValueError):
        sinr(0, d, h, 0.0)


@settings(max_examples=30)
@given(st.floats(0, 2 * np.pi), st.integers(0, 1))
def test_sinr_global_phase_invariance(phase, j):
    rng = np.random.default_rng(5)
    fs = [rng.standard_normal(3) + 1j * rng.standard_normal(3) for _ in range(2)]
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    base = TransmitDesign(fs, np.zeros((3, 3)))
    rot = list(fs)
    rot[j] = rot[j] * np.exp(1j * phase)
    assert sinr(0, TransmitDesign(rot, np.zeros((3, 3))), h, 0.1) == pytest.approx(sinr(0, base, h, 0.1), rel=1e-12)


def test_rate_examples():
    assert rate(0) == 0
    assert rate(1) == 1.0
    assert rate(2**14 - 1) == pytest.approx(14.0, abs=1e-12)
    with pytest.raises(ValueError):
        rate(-0.1)


@pytest.mark.parametrize("r,gamma,xi", [(1, 1, 2), (7, 127, 128 / 127), (14, 16383, 16384 / 16383)])
def test_rate_to_sinr_threshold(r, gamma, xi):
    g, x = rate_to_sinr_threshold(r)
    assert g == gamma
    assert x == pytest.approx(xi, rel=1e-15)
    assert x == pytest.approx(1 + 1 / g, rel=1e-15)


@given(st.floats(1e-3, 30))
def test_threshold_inverts_rate(r):
    g, _ = rate_to_sinr_threshold(r)
    assert float(rate(g)) == pytest.approx(r, abs=1e-12 * max(1, r))


def test_threshold_rejects_nonpositive():
    for r in (0, -1):
        with pytest.raises(ValueError):
            rate_to_sinr_threshold(r)


def test_beampattern_gain_examples(rng):
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    assert beampattern_gain(np.eye(4), h) == pytest.approx(np.linalg.norm(h) ** 2)
    assert beampattern_gain(2.5 / 4 * np.eye(4), h) == pytest.approx(2.5 / 4 * np.linalg.norm(h) ** 2)
    f = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    assert beampattern_gain(np.outer(f, f.conj()), h) == pytest.approx(abs(h @ f) ** 2)


def test_cross_correlation_examples(rng):
    r = random_psd(rng, 4)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    c = cross_correlation(r, h, h)
    assert abs(c.imag) < 1e-12 * abs(c)
    assert c.real == pytest.approx(beampattern_gain(r, h))
    assert cross_correlation(np.eye(2), np.array([1, 0]), np.array([0, 1])) == 0


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    r = random_psd(rng, 5, rank=rng.integers(1, 6))
    a, b = (rng.standard_normal(5) + 1j * rng.standard_normal(5) for _ in range(2))
    ga, gb = beampattern_gain(r, a), beampattern_gain(r, b)
    assert ga >= 0 and gb >= 0
    assert abs(cross_correlation(r, a, b)) ** 2 <= ga * gb * (1 + 1e-10)


def test_weights_and_pairs():
    w = SensingWeights({"a": 2.0}, {frozenset(("a", "b")): 3.0}, 0.2)
    assert w.gain("a") == 2.0 and w.gain("b") == 1.0
    assert w.pair("b", "a") == 3.0 and w.pair("a", "c") == 1.0
    with pytest.raises(ValueError):
        SensingWeights(epsilon=0)
    with pytest.raises(ValueError):
        SensingWeights({"a": -1})
    assert target_pairs(["a", "b", "c"]) == [("a", "b"), ("a", "c"), ("b", "c")]
    assert target_pairs(["a", "b", "c"], skip=[("b", "a")]) == [("a", "c"), ("b", "c")]
    assert worst_case_gain(np.eye(2), {"a": np.array([1, 0]), "b": np.array([0, 2])}, w) == 2.0


def test_feasibility_report(scenario, channels, rng):
    ris = RisState(rng.uniform(0, 2 * np.pi, channels.num_ris))
    n = channels.num_tx
    d = TransmitDesign([0.1 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) for _ in scenario.users],
                       random_psd(rng, n, scale=0.01))
    rep = feasibility_report(scenario, d, ris, channels)
    assert set(rep.rates) == {u.name for u in scenario.users}
    assert rep.mu == pytest.approx(min(rep.gains.values()))
    assert rep.power == pytest.approx(np.trace(d.total_cov).real)
    flat = rep.to_dict()
    json.dumps(flat)
    assert flat["feasible"] == rep.feasible
    # lowering the rate requirements and raising the power budget can only remove violations
    easy = feasibility_report(scenario, d, ris, channels, min_rates={u.name: 1e-9 for u in scenario.users},
                              drop_pairs=True)
    assert not any(k.startswith(("rate", "cross")) for k in easy.violations())
    assert rep.cross and not easy.cross

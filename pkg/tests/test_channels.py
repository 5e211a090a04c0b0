import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_scenario
from nfisac.channels import (ChannelSet, RisState, bs_ris_matrix, build_channel_set, effective_rx_channel,
                             effective_tx_channel, effective_tx_channel_diag, los_rx_channel, los_tx_channel,
                             ris_bs_rx_matrix, ris_link_channel, roundtrip_channel, virtual_channels)
from nfisac.geometry import Wave, build_upa, pathloss_phase, radiation_pattern

LAM = 0.01
WAVE = Wave(LAM)


def single(center=(0, 0, 0), normal=(0, 1, 0)):
    return build_upa(1, 1, 0.005, center, normal)


def test_los_tx_behind_array_is_zero():
    tx = build_upa(2, 2, 0.005, [0, 0, 0], [0, 1, 0])
    np.testing.assert_array_equal(los_tx_channel([0, -0.2, 0.01], tx, WAVE), 0)


def test_los_tx_single_element_boresight():
    h = los_tx_channel([0, LAM / (4 * np.pi), 0], single(), WAVE)
    assert abs(h[0]) == pytest.approx(np.sqrt(6), rel=1e-12)


def test_los_tx_magnitudes_ordered_by_distance():
    tx = build_upa(1, 2, 0.005, [0, 0, 0], [0, 1, 0])
    # a point on the boresight plane of both elements at equal angles would tie; offset along the array axis
    p = tx.element_positions[0] + np.array([0, 0.3, 0])
    h = los_tx_channel(p, tx, WAVE)
    d = np.linalg.norm(p - tx.element_positions, axis=1)
    g = radiation_pattern(p - tx.element_positions, tx.normal)
    # normalize out the pattern so only the distance ordering remains
    m = np.abs(h) / np.sqrt(g)
    assert (m[0] > m[1]) == (d[0] < d[1])


def test_los_channels_reject_coincident_points():
    tx = build_upa(2, 2, 0.005, [0, 0, 0], [0, 1, 0])
    with pytest.raises(ValueError):
        los_tx_channel(tx.element_positions[0], tx, WAVE)
    with pytest.raises(ValueError):
        ris_link_channel(tx.element_positions[1], tx, WAVE)


def test_los_rx_mirrors_los_tx_for_identical_arrays():
    arr = build_upa(3, 3, 0.005, [0, -0.05, 0.05], np.array([0, 1, -1]) / np.sqrt(2))
    p = [0.01, 0.03, 0.02]
    np.testing.assert_allclose(los_rx_channel(p, arr, WAVE), los_tx_channel(p, arr, WAVE), rtol=1e-14)


def test_ris_link_formula():
    ris = build_upa(2, 2, 0.005, [0, 0, 0], [0, 0, 1])
    p = np.array([0.01, 0.02, 0.07])
    h = ris_link_channel(p, ris, WAVE)
    d = p - ris.element_positions
    ref = np.sqrt(radiation_pattern(d, ris.normal)) * pathloss_phase(d, LAM)
    np.testing.assert_allclose(h, ref, rtol=1e-14)


def test_bs_ris_scalar_reduction_and_bound():
    tx = single([0, -0.05, 0.05], np.array([0, 1, -1]) / np.sqrt(2))
    ris = single([0, 0, 0], [0, 0, 1])
    g = bs_ris_matrix(tx, ris, WAVE)
    d = ris.element_positions[0] - tx.element_positions[0]
    ref = np.sqrt(radiation_pattern(d, tx.normal)) * np.sqrt(radiation_pattern(-d, ris.normal)) * pathloss_phase(d, LAM)
    np.testing.assert_allclose(g[0, 0], ref, rtol=1e-14)
    big_tx = build_upa(3, 3, 0.005, [0, -0.05, 0.05], np.array([0, 1, -1]) / np.sqrt(2))
    big_ris = build_upa(4, 4, 0.005, [0, 0, 0], [0, 0, 1])
    g = bs_ris_matrix(big_tx, big_ris, WAVE)
    assert g.shape == (16, 9)
    dmin = np.linalg.norm(big_ris.element_positions[:, None] - big_tx.element_positions[None], axis=-1).min()
    assert np.abs(g).max() <= 6.0 * LAM / (4 * np.pi * dmin)


def test_bs_ris_pattern_null_gives_zero_entry():
    tx = single([0, 0, 0], [0, 1, 0])
    ris = single([0, -0.1, 0], [0, 1, 0])  # behind the BS element
    assert bs_ris_matrix(tx, ris, WAVE)[0, 0] == 0


def test_ris_bs_rx_is_transpose_for_identical_arrays():
    arr = build_upa(2, 3, 0.005, [0, -0.05, 0.05], np.array([0, 1, -1]) / np.sqrt(2))
    ris = build_upa(3, 3, 0.005, [0, 0, 0], [0, 0, 1])
    np.testing.assert_allclose(ris_bs_rx_matrix(ris, arr, WAVE), bs_ris_matrix(arr, ris, WAVE).T, rtol=1e-13)


def test_overlapping_arrays_rejected():
    arr = build_upa(2, 2, 0.005, [0, 0, 0], [0, 0, 1])
    with pytest.raises(ValueError):
        bs_ris_matrix(arr, arr, WAVE)


def test_channel_set_affine_consistency(channels):
    for name, a in channels.affine.items():
        np.testing.assert_allclose(a, channels.bs_ris.T @ np.diag(channels.ris_link[name]), rtol=1e-14)


def test_channel_set_rejects_inconsistent_affine(channels):
    bad = {k: v * 1.01 for k, v in channels.affine.items()}
    with pytest.raises(ValueError):
        ChannelSet(channels.los_tx, channels.los_rx, channels.ris_link, channels.bs_ris,
                   channels.ris_bs_rx, channels.alpha, bad)


def test_channel_set_rejects_non_finite(channels):
    los = dict(channels.los_tx)
    los["user1"] = los["user1"] * np.nan
    with pytest.raises(ValueError):
        ChannelSet(los, channels.los_rx, channels.ris_link, channels.bs_ris, channels.ris_bs_rx, channels.alpha)


def test_blocked_entity_uses_only_ris_path():
    sc = small_scenario(blockage="y_nonnegative")
    ch = build_channel_set(sc, warn_far_field=False)
    blocked = [e for e in (*sc.users, *sc.targets) if e.los_available == 0]
    assert blocked
    for e in blocked:
        h = effective_tx_channel(e.name, RisState.zeros(ch.num_ris), ch)
        np.testing.assert_allclose(h, ch.affine[e.name] @ np.ones(ch.num_ris), rtol=1e-14)


def test_scalar_ris_effective_channel():
    sc = small_scenario(ris_rows=1)
    ch = build_channel_set(sc, warn_far_field=False)
    theta = 0.7
    h = effective_tx_channel("user1", RisState([theta]), ch)
    np.testing.assert_allclose(h, ch.los_tx["user1"] + np.exp(1j * theta) * ch.affine["user1"][:, 0], rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_affine_and_diagonal_forms_agree(seed):
    sc = small_scenario()
    ch = build_channel_set(sc, warn_far_field=False)
    phases = np.random.default_rng(seed).uniform(0, 2 * np.pi, ch.num_ris)
    for e in (*sc.users, *sc.targets):
        a = effective_tx_channel(e.name, RisState(phases), ch)
        b = effective_tx_channel_diag(e.name, RisState(phases), ch)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(a).max())


def test_global_phase_equivariance():
    sc = small_scenario(blockage="y_nonnegative")
    ch = build_channel_set(sc, warn_far_field=False)
    rng = np.random.default_rng(3)
    phases = rng.uniform(0, 2 * np.pi, ch.num_ris)
    for e in (*sc.users, *sc.targets):
        base = effective_tx_channel(e.name, RisState(phases), ch) - ch.direct_tx(e.name)
        rot = effective_tx_channel(e.name, RisState(phases + 0.9), ch) - ch.direct_tx(e.name)
        np.testing.assert_allclose(rot, np.exp(0.9j) * base, rtol=1e-12, atol=1e-20)
        if e.los_available == 0:
            n0 = np.linalg.norm(effective_tx_channel(e.name, RisState(phases), ch))
            n1 = np.linalg.norm(effective_tx_channel(e.name, RisState(phases + 0.9), ch))
            assert n0 == pytest.approx(n1, rel=1e-12)


def test_reciprocity_with_identical_arrays(scenario, channels):
    for t in scenario.targets:
        np.testing.assert_allclose(channels.los_tx[t.name], channels.los_rx[t.name], rtol=1e-14)


def test_effective_rx_formula(scenario, channels, rng):
    phases = rng.uniform(0, 2 * np.pi, channels.num_ris)
    t = scenario.targets[0].name
    ref = channels.los_rx[t] + channels.ris_bs_rx @ np.diag(np.exp(1j * phases)) @ channels.ris_link[t]
    np.testing.assert_allclose(effective_rx_channel(t, RisState(phases), channels), ref, rtol=1e-13)


def test_roundtrip_properties(scenario, channels, rng):
    phases = RisState(rng.uniform(0, 2 * np.pi, channels.num_ris))
    t = scenario.targets[0]
    t.rcs = 0.3 - 0.4j
    h = roundtrip_channel(t, phases, channels)
    assert np.linalg.matrix_rank(h, tol=1e-12 * np.abs(h).max()) == 1
    hr = effective_rx_channel(t.name, phases, channels)
    ht = effective_tx_channel(t.name, phases, channels)
    assert np.linalg.norm(h) == pytest.approx(0.5 * np.linalg.norm(hr) * np.linalg.norm(ht), rel=1e-12)
    t.rcs = 0
    np.testing.assert_array_equal(roundtrip_channel(t, phases, channels), 0)


def test_dimension_mismatch_rejected(channels):
    with pytest.raises(ValueError):
        effective_tx_channel("user1", RisState.zeros(channels.num_ris + 1), channels)


def test_virtual_channels_match_entity_channels(scenario, channels, rng):
    phases = RisState(rng.uniform(0, 2 * np.pi, channels.num_ris))
    pts = np.array([e.position for e in (*scenario.users, *scenario.targets)])
    tx = virtual_channels(pts, scenario, phases, channels)
    for e, h in zip((*scenario.users, *scenario.targets), tx):
        np.testing.assert_allclose(h, effective_tx_channel(e.name, phases, channels), rtol=1e-12)
    rx = virtual_channels([t.position for t in scenario.targets], scenario, phases, channels, receive=True)
    for t, h in zip(scenario.targets, rx):
        np.testing.assert_allclose(h, effective_rx_channel(t.name, phases, channels), rtol=1e-12)


def test_far_field_warning():
    sc = small_scenario()
    sc.users[0].position = np.array([0.0, 0.0, 5.0])
    with pytest.warns(UserWarning):
        build_channel_set(sc)


def test_channel_builders_deterministic(scenario):
    a = build_channel_set(scenario, warn_far_field=False)
    b = build_channel_set(scenario, warn_far_field=False)
    np.testing.assert_array_equal(a.bs_ris, b.bs_ris)
    for k in a.los_tx:
        np.testing.assert_array_equal(a.los_tx[k], b.los_tx[k])

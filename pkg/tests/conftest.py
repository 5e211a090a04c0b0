import numpy as np
import pytest

from nfisac.channels import build_channel_set
from nfisac.geometry import TARGET, USER, PointEntity, Wave, build_upa
from nfisac.scenario import Scenario


def small_scenario(n_users=2, n_targets=2, rows=2, ris_rows=2, blockage="none", p_max=1.0,
                   min_rate=1.0, noise=1e-9, sensing_noise=1e-12):
    """A compact scenario with every channel component non-trivial."""
    wave = Wave(0.01)
    normal = np.array([0.0, 1.0, -1.0]) / np.sqrt(2)
    tx = build_upa(rows, rows, 0.005, [0, -0.05, 0.05], normal)
    ris = build_upa(ris_rows, ris_rows, 0.005, [0, 0, 0], [0, 0, 1])
    users = [PointEntity(f"user{k + 1}", [0.01 * (k + 1), -0.02 + 0.03 * k, 0.06], USER,
                         1, noise_power=noise, min_rate=min_rate) for k in range(n_users)]
    targets = [PointEntity(f"target{i + 1}", [-0.01 * (i + 1), 0.02 + 0.02 * i, 0.05 + 0.01 * i], TARGET, 1)
               for i in range(n_targets)]
    from nfisac.geometry import los_indicator
    for e in (*users, *targets):
        e.los_available = los_indicator(e.position, blockage)
    return Scenario(wave, tx, tx, ris, users, targets, p_max=p_max, sensing_noise=sensing_noise,
                    blockage_rule=blockage)


@pytest.fixture
def scenario():
    return small_scenario()


@pytest.fixture
def channels(scenario):
    return build_channel_set(scenario, warn_far_field=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_psd(rng, n, rank=None, scale=1.0):
    rank = rank or n
    a = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return scale * a @ a.conj().T / rank


# -- acceptance report -------------------------------------------------------

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str = ""):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

"""Alternating optimization of BS beamforming and RIS phases via SDR.

Each AO round solves two semidefinite relaxations:

* BS stage: for fixed RIS phases, maximize the worst weighted beampattern
  gain over the user covariances ``F_k`` and the sensing covariance ``R_s``
  subject to cross-correlation, rate and power constraints; rank-one
  beamformers are then recovered without loss.
* RIS stage: for fixed ``R_x`` and beamformers, lift ``phi_bar = [phi; 1]``
  to ``Psi = phi_bar phi_bar^H`` and solve the relaxed problem; phases are
  rounded from the dominant eigenvector.

Both SDPs are posed in normalized units (power in units of ``P_max``, gains
in units of ``P_max * g_ref``) before being handed to a conic backend.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channels import ChannelSet, RisState, effective_tx_channel
from .conic import (INFEASIBLE, OPTIMAL, Affine, ConicProblem, ConicSolution, SolverError,
                    default_backend)
from .metrics import (FeasibilityReport, SensingWeights, TransmitDesign, feasibility_report,
                      rate_to_sinr_threshold, target_pairs, worst_case_gain)

log = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    def __init__(self, stage: str, implicated=(), message: str = ""):
        self.stage = stage
        self.implicated = list(implicated)
        super().__init__(message or f"{stage} subproblem infeasible (implicated: {', '.join(self.implicated) or '?'})")


class DegenerateUserError(ValueError):
    """A user receives no power from its recovered covariance."""


class RoundingDegenerateError(ValueError):
    pass


@dataclass
class ConstraintSet:
    """Which constraints of the joint problem are active.

    Benchmarks relax the rate targets or drop cross-correlation pairs.
    """

    skip_pairs: tuple = ()
    drop_pairs: bool = False
    min_rates: Optional[dict] = None

    def pairs(self, scenario) -> list:
        if self.drop_pairs:
            return []
        return target_pairs([t.name for t in scenario.targets], self.skip_pairs)

    def min_rate(self, user) -> float:
        return (self.min_rates or {}).get(user.name, user.min_rate)


@dataclass
class AoConfig:
    max_iterations: int = 20
    convergence_tol: float = 1e-3
    solver_tol: float = 1e-8
    weights: Optional[SensingWeights] = None
    ris_init: str = "zeros"  # zeros | random | matched
    seed: int = 0
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    retry_random_init: bool = True
    # phase-one search used when neither the initial nor the random retry
    # state admits a feasible BS design
    feasibility_search: bool = True
    search_iterations: int = 30
    search_mu_floor: float = 1e-7

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.convergence_tol > 0 and self.solver_tol > 0):
            raise ValueError("tolerances must be positive")

    @property
    def check_tol(self) -> float:
        return 10 * self.solver_tol


@dataclass
class BsSolution:
    covariances: list
    sensing_cov: np.ndarray
    mu: float
    conic: ConicSolution

    @property
    def total_cov(self) -> np.ndarray:
        return sum(self.covariances, self.sensing_cov.copy())


@dataclass
class RisSolution:
    psi: np.ndarray
    mu: float
    conic: ConicSolution


@dataclass
class AoResult:
    mu_trace: list
    final_design: TransmitDesign
    final_ris: RisState
    feasibility: FeasibilityReport
    stage_statuses: list
    records: list = field(default_factory=list)
    ris_relaxed_trace: list = field(default_factory=list)
    rounding_loss: list = field(default_factory=list)
    converged: bool = False
    terminated: str = ""
    constraint_count: dict = field(default_factory=dict)
    # report on the channels the optimizer used, when they differ from the evaluation channels
    model_feasibility: Optional[FeasibilityReport] = None

    @property
    def mu(self) -> float:
        return self.mu_trace[-1]

    def monotone(self, slack: float = 1e-6) -> bool:
        t = np.asarray(self.mu_trace)
        return bool(np.all(np.diff(t) >= -slack * max(1.0, abs(t).max())))

    def log_lines(self) -> list:
        return [json.dumps(r) for r in self.records]


def _weights(scenario, config: AoConfig | None) -> SensingWeights:
    return (config.weights if config and config.weights else scenario.weights)


def _gain_reference(scenario, h: dict, weights: SensingWeights) -> float:
    refs = [weights.gain(t.name) * np.linalg.norm(h[t.name]) ** 2 for t in scenario.targets]
    ref = max(refs, default=0.0)
    return ref if ref > 0 else 1.0


# -- BS stage ----------------------------------------------------------------

def channel_subspace(vectors, rtol: float = 1e-12, whiten: bool = False,
                     max_gain: float = 1e3) -> np.ndarray:
    """Basis of span{h^*} for the given channels.

    Every BS-stage quantity depends on the covariances only through
    h_a^T X h_b^* and Tr(X); compressing X to the span loses nothing and the
    optimum is attained by B X_hat B^H.  The basis is orthonormal unless
    ``whiten`` is set, in which case column j is scaled by
    min(s_max / s_j, max_gain) so that coordinates carry channel energy of
    comparable order.  The cap keeps nearly-dependent channels (s_j close to
    the rtol cut) from blowing up the power row.
    """
    mat = np.array([np.conj(v) for v in vectors]).T
    if mat.size == 0:
        return np.zeros((0, 0))
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    keep = s > rtol * s.max() if s.size and s.max() > 0 else np.zeros(s.size, bool)
    if whiten:
        return u[:, keep] * np.minimum(s[0] / s[keep], max_gain)[None, :]
    return u[:, keep]


def build_bs_problem(scenario, channels: ChannelSet, ris_state, config: AoConfig | None = None,
                     reduce: bool = True, whiten: bool = True):
    """BS-side SDP in normalized units.

    Returns (problem, g_ref, basis): covariances are recovered as
    ``P_max * basis @ X_hat @ basis^H`` and mu as ``P_max * g_ref * mu_hat``.
    """
    config = config or AoConfig()
    cons = config.constraints
    weights = _weights(scenario, config)
    h = {e.name: effective_tx_channel(e.name, ris_state, channels)
         for e in (*scenario.users, *scenario.targets)}
    g_ref = _gain_reference(scenario, h, weights)
    p = scenario.p_max
    if reduce:
        basis = channel_subspace(list(h.values()), whiten=whiten)
        if basis.shape[1] == 0:
            basis = np.eye(channels.num_tx)[:, :1]
        h = {k: basis.T @ v for k, v in h.items()}
    else:
        basis = np.eye(channels.num_tx)
    n = basis.shape[1]

    prob = ConicProblem()
    f_names = [prob.add_matrix(f"F{k}", n) for k in range(len(scenario.users))]
    prob.add_matrix("Rs", n)
    prob.add_scalar("mu")
    prob.maximize(Affine({"mu": 1.0}))

    def on_total(c):
        # Tr(C R_x) with R_x = sum_k F_k + R_s
        return {name: c for name in (*f_names, "Rs")}

    for t in scenario.targets:
        c = weights.gain(t.name) / g_ref * np.outer(h[t.name].conj(), h[t.name])
        prob.add_linear(Affine({**on_total(c), "mu": -1.0}), ">=", f"gain:{t.name}", "beampattern")
    for a, b in cons.pairs(scenario):
        c = weights.pair(a, b) / g_ref * np.outer(h[b].conj(), h[a])
        prob.add_modulus(Affine(on_total(c)), Affine({"mu": weights.epsilon}),
                         f"cross:{a},{b}", "cross_correlation")
    for k, u in enumerate(scenario.users):
        _, xi = rate_to_sinr_threshold(cons.min_rate(u))
        # Tr(H_k (xi F_k - R_x)) >= sigma_k^2, divided by sigma_k^2 / P_max
        hk = np.outer(h[u.name].conj(), h[u.name]) * (p / u.noise_power)
        terms = on_total(-hk)
        terms[f_names[k]] = (xi - 1.0) * hk
        prob.add_linear(Affine(terms, -1.0), ">=", f"sinr:{u.name}", "rate")
    prob.add_linear(Affine(on_total(basis.conj().T @ basis), -1.0), "<=", "power", "power")
    return prob, g_ref, basis


def solve_bs_subproblem(scenario, channels: ChannelSet, ris_state, config: AoConfig | None = None,
                        backend=None, reduce: bool = True, whiten: bool = True) -> BsSolution:
    config = config or AoConfig()
    backend = backend or default_backend(config.solver_tol)
    prob, g_ref, basis = build_bs_problem(scenario, channels, ris_state, config, reduce, whiten)
    sol = backend.solve(prob)
    if sol.status == INFEASIBLE:
        raise InfeasibleError("bs", sol.implicated)
    if sol.status != OPTIMAL:
        raise SolverError(f"BS subproblem: {sol.status} ({sol.message}), max residual {sol.max_residual:.2e}")
    return _lift_bs(scenario, sol, g_ref, basis)


def recover_rank_one(covariances, sensing_cov, user_channels, tol: float = 1e-8):
    """Rank-one beamformers from SDP covariances, with the remainder moved to R_s.

    f_k = (h_k^T F_k h_k^*)^{-1/2} F_k h_k^*, and
    R_s_hat = R_s + sum_k (F_k - f_k f_k^H).  The total covariance and every
    |h_k^T f_k|^2 are preserved.
    """
    beamformers = []
    r_s = np.array(sensing_cov, dtype=complex)
    total = r_s + sum(covariances, np.zeros_like(r_s))
    for F, h in zip(covariances, user_channels):
        q = (h @ F @ h.conj()).real
        if not q > 0:
            raise DegenerateUserError(f"user channel captures no power (h^T F h^* = {q:.3e})")
        f = F @ h.conj() / np.sqrt(q)
        beamformers.append(f)
        r_s += F - np.outer(f, f.conj())
    r_s = (r_s + r_s.conj().T) / 2

    scale = max(np.trace(total).real, 1e-300)
    for F, h, f in zip(covariances, user_channels, beamformers):
        q = (h @ F @ h.conj()).real
        assert abs(abs(h @ f) ** 2 - q) <= 1e-10 * max(q, 1e-300) * 1e2, "signal power not preserved"
    assert np.linalg.eigvalsh(r_s).min() >= -tol * scale, "recovered sensing covariance not PSD"
    new_total = r_s + sum(np.outer(f, f.conj()) for f in beamformers)
    assert np.linalg.norm(new_total - total) <= 1e-9 * max(np.linalg.norm(total), 1e-300), \
        "total covariance changed"
    return beamformers, r_s


def _lift_bs(scenario, sol: ConicSolution, g_ref: float, basis: np.ndarray) -> BsSolution:
    p = scenario.p_max

    def lift(x):
        x = basis @ x @ basis.conj().T
        return p * (x + x.conj().T) / 2

    covs = [lift(sol.values[f"F{k}"]) for k in range(len(scenario.users))]
    return BsSolution(covs, lift(sol.values["Rs"]), p * g_ref * sol.values["mu"], sol)


def build_power_problem(scenario, channels: ChannelSet, ris_state, config: AoConfig | None = None):
    """Minimum-power variant of the BS SDP used by the feasibility search.

    Same rows as :func:`build_bs_problem` except that the power budget
    becomes the objective and mu is held above ``search_mu_floor`` times
    ``P_max * g_ref`` (a zero floor would turn every cross-correlation row
    into an equality).
    """
    config = config or AoConfig()
    prob, g_ref, basis = build_bs_problem(scenario, channels, ris_state, config)
    power = next(c for c in prob.constraints if c.family == "power")
    prob.constraints.remove(power)
    prob.maximize(power.expr.scale(-1.0))  # maximize 1 - Tr(R_x) / P_max
    prob.add_linear(Affine({"mu": 1.0}, -config.search_mu_floor), ">=", "mu_floor", "mu_floor")
    return prob, g_ref, basis


def solve_power_subproblem(scenario, channels: ChannelSet, ris_state, config: AoConfig | None = None,
                           backend=None) -> tuple[BsSolution, float]:
    """Least transmit power meeting every constraint at ``ris_state``."""
    config = config or AoConfig()
    backend = backend or default_backend(config.solver_tol)
    prob, g_ref, basis = build_power_problem(scenario, channels, ris_state, config)
    sol = backend.solve(prob)
    if sol.status == INFEASIBLE:
        raise InfeasibleError("power", sol.implicated)
    if sol.status != OPTIMAL:
        raise SolverError(f"power subproblem: {sol.status} ({sol.message})")
    return _lift_bs(scenario, sol, g_ref, basis), (1.0 - sol.objective) * scenario.p_max


# -- RIS stage ---------------------------------------------------------------

def _lifted(name: str, channels: ChannelSet) -> np.ndarray:
    # B_a = [A_a, alpha_a h_bar_a] so that h_a(phi) = B_a @ [phi; 1]
    return np.hstack([channels.affine[name], channels.direct_tx(name)[:, None]])


def build_M_pair(a: str, b: str, total_cov, channels: ChannelSet) -> np.ndarray:
    """M with Tr(M phi_bar phi_bar^H) = h_a(phi)^T R_x h_b(phi)^*."""
    ba, bb = _lifted(a, channels), _lifted(b, channels)
    r = np.asarray(total_cov)
    if r.shape != (ba.shape[0], ba.shape[0]):
        raise ValueError("covariance dimension does not match the transmit array")
    return bb.conj().T @ r.T @ ba


def build_M_sinr(k: int, user: str, beamformers, sensing_cov, gamma: float,
                 channels: ChannelSet) -> np.ndarray:
    """M with Tr(M phi_bar phi_bar^H) = |h^T f_k|^2 - gamma * (interference)."""
    fk = beamformers[k]
    interference = np.array(sensing_cov, dtype=complex)
    for j, f in enumerate(beamformers):
        if j != k:
            interference += np.outer(f, f.conj())
    s = np.outer(fk, fk.conj()) - gamma * interference
    b = _lifted(user, channels)
    if s.shape != (b.shape[0], b.shape[0]):
        raise ValueError("beamformer dimension does not match the transmit array")
    return b.conj().T @ s.T @ b


def build_ris_problem(scenario, channels: ChannelSet, design: TransmitDesign, ris_state=None,
                      config: AoConfig | None = None):
    config = config or AoConfig()
    cons = config.constraints
    weights = _weights(scenario, config)
    n = channels.num_ris + 1
    p = scenario.p_max
    if ris_state is None:
        ris_state = RisState.zeros(channels.num_ris)
    h = {t.name: effective_tx_channel(t.name, ris_state, channels) for t in scenario.targets}
    r_x = design.total_cov
    # normalize sensing rows by the gain the design already achieves, so the
    # relaxed mu is O(1) even when it is many orders below P_max * |h|^2
    scale = worst_case_gain(r_x, h, weights) if h else 0.0
    if not (np.isfinite(scale) and scale > 0):
        scale = p * _gain_reference(scenario, h, weights)

    prob = ConicProblem()
    prob.add_matrix("Psi", n)
    prob.add_scalar("mu")
    prob.maximize(Affine({"mu": 1.0}))
    for t in scenario.targets:
        m = build_M_pair(t.name, t.name, r_x, channels) * (weights.gain(t.name) / scale)
        prob.add_linear(Affine({"Psi": m, "mu": -1.0}), ">=", f"gain:{t.name}", "beampattern")
    for a, b in cons.pairs(scenario):
        m = build_M_pair(a, b, r_x, channels) * (weights.pair(a, b) / scale)
        prob.add_modulus(Affine({"Psi": m}), Affine({"mu": weights.epsilon}),
                         f"cross:{a},{b}", "cross_correlation")
    for k, u in enumerate(scenario.users):
        gamma, _ = rate_to_sinr_threshold(cons.min_rate(u))
        m = build_M_sinr(k, u.name, design.beamformers, design.sensing_cov, gamma, channels)
        prob.add_linear(Affine({"Psi": m / (gamma * u.noise_power)}, -1.0), ">=", f"sinr:{u.name}", "rate")
    for i in range(n):
        prob.fix_entry("Psi", i, i, 1.0, f"diag:{i}", "unit_modulus")
    return prob, scale


def solve_ris_subproblem(scenario, channels: ChannelSet, design: TransmitDesign, ris_state=None,
                         config: AoConfig | None = None, backend=None) -> RisSolution:
    config = config or AoConfig()
    backend = backend or default_backend(config.solver_tol)
    prob, scale = build_ris_problem(scenario, channels, design, ris_state, config)
    sol = backend.solve(prob)
    if sol.status == INFEASIBLE:
        raise InfeasibleError("ris", sol.implicated)
    if sol.status != OPTIMAL:
        raise SolverError(f"RIS subproblem: {sol.status} ({sol.message}), max residual {sol.max_residual:.2e}")
    return RisSolution(sol.values["Psi"], scale * sol.values["mu"], sol)


def build_margin_problem(scenario, channels: ChannelSet, design: TransmitDesign, ris_state,
                         config: AoConfig | None = None):
    """RIS SDP of the feasibility search: maximize the smallest SINR margin.

    The rows are those of :func:`build_ris_problem`; every normalized SINR
    row gets a common margin variable ``t`` which becomes the objective,
    while the sensing rows keep mu above the search floor.
    """
    config = config or AoConfig()
    prob, scale = build_ris_problem(scenario, channels, design, ris_state, config)
    prob.add_scalar("t")
    for c in prob.constraints:
        if c.family == "rate":
            c.expr = c.expr + Affine({"t": -1.0})
    floor = config.search_mu_floor * scenario.p_max * _gain_reference(
        scenario, {t.name: effective_tx_channel(t.name, ris_state, channels) for t in scenario.targets},
        _weights(scenario, config))
    prob.add_linear(Affine({"mu": 1.0}, -floor / scale), ">=", "mu_floor", "mu_floor")
    prob.maximize(Affine({"t": 1.0}))
    return prob, scale


def round_ris_phases(psi, degenerate_tol: float = 1e-10) -> RisState:
    """Dominant-eigenvector rounding of the lifted RIS matrix.

    The eigenvector is normalized by its last entry and its first N_s
    entries are projected onto the unit circle.  A repeated top eigenvalue is
    resolved by projecting e_last onto its eigenspace.  If the last entry is
    still negligible the top-3 eigenvector with the largest last entry is used.
    """
    psi = np.asarray(psi, dtype=complex)
    psi = (psi + psi.conj().T) / 2
    vals, vecs = np.linalg.eigh(psi)
    order = np.argsort(-vals, kind="stable")
    v = vecs[:, order[0]]
    top_space = vecs[:, vals >= vals.max() - 1e-12 * max(abs(vals).max(), 1e-300)]
    if top_space.shape[1] > 1:
        # repeated top eigenvalue: the member of that eigenspace with the
        # largest last entry (projection of e_last) is a deterministic choice
        v = top_space @ top_space[-1].conj()
        v = v / np.linalg.norm(v) if np.linalg.norm(v) > 0 else vecs[:, order[0]]
    if abs(v[-1]) < degenerate_tol:
        top = order[:3]
        lasts = np.abs(vecs[-1, top])
        best = top[int(np.argmax(lasts))]  # argmax keeps the first (largest eigenvalue) on ties
        v = vecs[:, best]
        if abs(v[-1]) < degenerate_tol:
            raise RoundingDegenerateError("no leading eigenvector has a usable last entry")
    cand = v[:-1] / v[-1]
    mag = np.abs(cand)
    phi = np.where(mag > 1e-300, cand / np.where(mag > 1e-300, mag, 1.0), 1.0)
    return RisState(np.angle(phi))


# -- AO driver ---------------------------------------------------------------

def initial_ris_state(scenario, channels: ChannelSet, policy: str = "zeros", seed: int = 0) -> RisState:
    n = channels.num_ris
    if policy == "zeros":
        return RisState.zeros(n)
    if policy == "random":
        return RisState(np.random.default_rng(seed).uniform(0, 2 * np.pi, n))
    if policy == "matched":
        name = scenario.targets[0].name if scenario.targets else scenario.users[0].name
        a = channels.affine[name]
        _, vecs = np.linalg.eigh(a.conj().T @ a)
        return RisState.from_phi(np.exp(1j * np.angle(vecs[:, -1])))
    raise ValueError(f"unknown RIS initialization {policy!r}")


def design_from_bs(scenario, channels, ris_state, bs: BsSolution) -> TransmitDesign:
    h_users = [effective_tx_channel(u.name, ris_state, channels) for u in scenario.users]
    f, r_s = recover_rank_one(bs.covariances, bs.sensing_cov, h_users)
    return TransmitDesign(f, r_s)


def achieved_mu(scenario, design: TransmitDesign, ris_state, channels, weights) -> float:
    h = {t.name: effective_tx_channel(t.name, ris_state, channels) for t in scenario.targets}
    return worst_case_gain(design.total_cov, h, weights)


def feasibility_search(scenario, channels: ChannelSet, ris_state, config: AoConfig | None = None,
                       backend=None, record: Callable | None = None) -> RisState:
    """Phase-one search for RIS phases at which the BS stage is feasible.

    Alternates a minimum-power BS SDP with a RIS SDP that maximizes the
    smallest SINR margin (followed by the usual eigenvector rounding) until
    the least required power fits in P_max.  Raises InfeasibleError when the
    iteration budget runs out.
    """
    config = config or AoConfig()
    backend = backend or default_backend(config.solver_tol)
    ris = ris_state
    best = (np.inf, ris)
    for it in range(config.search_iterations):
        try:
            bs, power = solve_power_subproblem(scenario, channels, ris, config, backend)
        except (InfeasibleError, SolverError) as exc:
            log.warning("feasibility search stopped at round %d: %s", it, exc)
            break
        if record:
            record(it, "search_bs", bs.mu, bs.conic, power_w=float(power))
        if power < best[0]:
            best = (power, ris)
        if power <= scenario.p_max * (1 - config.check_tol):
            return ris
        design = design_from_bs(scenario, channels, ris, bs)
        prob, _ = build_margin_problem(scenario, channels, design, ris, config)
        sol = backend.solve(prob)
        if sol.status != OPTIMAL:
            log.warning("feasibility search stopped at round %d: RIS margin step %s", it, sol.status)
            break
        if record:
            record(it, "search_ris", bs.mu, sol, margin=float(sol.values["t"]))
        ris = round_ris_phases(sol.values["Psi"])
    raise InfeasibleError("bs", ["power"],
                          f"no feasible RIS state found; least required power {best[0]:.4g} W "
                          f"exceeds P_max = {scenario.p_max:.4g} W")


def _initial_bs(scenario, channels, ris, config, backend, record):
    try:
        return solve_bs_subproblem(scenario, channels, ris, config, backend)
    except (InfeasibleError, SolverError) as exc:
        # an unbounded or stalled exit of a power-bounded problem is a disguised infeasibility
        record(0, "bs_init", None, None, error=str(exc))
        return None


def alternating_optimize(scenario, config: AoConfig | None = None, channels: ChannelSet | None = None,
                         backend=None, eval_channels: ChannelSet | None = None,
                         on_record: Callable[[dict], None] | None = None,
                         initial_ris: RisState | None = None) -> AoResult:
    """Run the BS/RIS alternation until the BS-stage optimum stops improving.

    ``channels`` is what the optimizer believes (far-field for the FFBF
    benchmark); the feasibility report is always computed on
    ``eval_channels`` (default: the same channels).
    """
    from .channels import build_channel_set

    config = config or AoConfig()
    channels = channels or build_channel_set(scenario)
    eval_channels = eval_channels or channels
    backend = backend or default_backend(config.solver_tol)
    weights = _weights(scenario, config)
    records, statuses = [], []

    def record(it, stage, mu, sol: ConicSolution | None, **extra):
        rec = {"iteration": it, "stage": stage, "mu": None if mu is None else float(mu),
               "status": sol.status if sol else "n/a",
               "max_residual": float(sol.max_residual) if sol else 0.0, **extra}
        records.append(rec)
        statuses.append((stage, rec["status"]))
        log.info("iter %d %s mu=%s status=%s", it, stage, rec["mu"], rec["status"])
        if on_record:
            on_record(rec)

    ris = initial_ris or initial_ris_state(scenario, channels, config.ris_init, config.seed)
    bs = _initial_bs(scenario, channels, ris, config, backend, record)
    if bs is None and config.retry_random_init and config.ris_init != "random" and initial_ris is None:
        log.warning("BS stage infeasible for the initial RIS state, retrying with random phases")
        ris = initial_ris_state(scenario, channels, "random", config.seed)
        bs = _initial_bs(scenario, channels, ris, config, backend, record)
    if bs is None:
        if not config.feasibility_search:
            raise InfeasibleError("bs", ["initial RIS state"])
        log.warning("BS stage infeasible for the initial RIS state, running the feasibility search")
        ris = feasibility_search(scenario, channels, ris, config, backend, record)
        bs = solve_bs_subproblem(scenario, channels, ris, config, backend)
    design = design_from_bs(scenario, channels, ris, bs)
    record(0, "bs", bs.mu, bs.conic)
    mu_trace, relaxed, losses = [bs.mu], [], []
    converged, reason = False, "max_iterations"

    for it in range(1, config.max_iterations + 1):
        try:
            rs = solve_ris_subproblem(scenario, channels, design, ris, config, backend)
        except (InfeasibleError, SolverError) as exc:
            reason = f"ris stage failed: {exc}"
            log.warning(reason)
            break
        new_ris = round_ris_phases(rs.psi)
        rounded_mu = achieved_mu(scenario, design, new_ris, channels, weights)
        relaxed.append(rs.mu)
        losses.append(rs.mu - rounded_mu)
        record(it, "ris", rs.mu, rs.conic, rounded_mu=float(rounded_mu))
        try:
            new_bs = solve_bs_subproblem(scenario, channels, new_ris, config, backend)
        except (InfeasibleError, SolverError) as exc:
            reason = f"bs stage failed after rounding: {exc}"
            log.warning(reason)
            break
        record(it, "bs", new_bs.mu, new_bs.conic)
        if new_bs.mu < bs.mu * (1 - config.check_tol):
            # rounding lost more than the RIS step gained; keep the previous iterate
            reason = "rounded phases did not improve the BS-stage optimum"
            converged = True
            break
        change = (new_bs.mu - bs.mu) / max(abs(bs.mu), 1e-300)
        ris, bs = new_ris, new_bs
        design = design_from_bs(scenario, channels, ris, bs)
        mu_trace.append(bs.mu)
        if abs(change) < config.convergence_tol:
            converged, reason = True, "relative change below tolerance"
            break

    def check(ch):
        return feasibility_report(scenario, design, ris, ch, weights,
                                  skip_pairs=config.constraints.skip_pairs,
                                  drop_pairs=config.constraints.drop_pairs,
                                  min_rates=config.constraints.min_rates,
                                  tol=config.check_tol * 10)

    report = check(eval_channels)
    model_report = check(channels) if eval_channels is not channels else None
    counts = build_bs_problem(scenario, channels, ris, config)[0].families()
    return AoResult(mu_trace, design, ris, report, statuses, records, relaxed, losses,
                    converged, reason, counts, model_report)

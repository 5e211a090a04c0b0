"""ISAC performance quantities and the feasibility checker.

Channel vectors follow the transmit convention of :mod:`nfisac.channels`:
the beampattern gain of a covariance ``R`` on channel ``h`` is
``h^T R h^*``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class TransmitDesign:
    beamformers: list
    sensing_cov: np.ndarray

    def __post_init__(self):
        self.beamformers = [np.asarray(f, dtype=complex) for f in self.beamformers]
        self.sensing_cov = np.asarray(self.sensing_cov, dtype=complex)
        self.total_cov = transmit_covariance(self.beamformers, self.sensing_cov)

    @property
    def num_tx(self) -> int:
        return self.sensing_cov.shape[0]

    def check(self, p_max: Optional[float] = None):
        tr = np.trace(self.total_cov).real
        if np.linalg.eigvalsh(self.sensing_cov).min() < -1e-8 * max(tr, 1e-300):
            raise ValueError("sensing covariance is not PSD")
        if p_max is not None and tr > p_max + 1e-9:
            raise ValueError(f"transmit power {tr} exceeds {p_max}")


@dataclass
class SensingWeights:
    """Per-target gain weights, per-pair cross-correlation weights, epsilon."""

    gain_weights: dict = field(default_factory=dict)
    pair_weights: dict = field(default_factory=dict)
    epsilon: float = 0.1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for w in (*self.gain_weights.values(), *self.pair_weights.values()):
            if not w > 0:
                raise ValueError("sensing weights must be positive")

    def gain(self, name: str) -> float:
        return self.gain_weights.get(name, 1.0)

    def pair(self, a: str, b: str) -> float:
        return self.pair_weights.get(frozenset((a, b)), 1.0)


def _is_hermitian(m: np.ndarray, tol: float = 1e-12) -> bool:
    scale = max(np.abs(m).max(initial=0.0), 1e-300)
    return np.abs(m - m.conj().T).max(initial=0.0) <= tol * scale


def transmit_covariance(beamformers, sensing_cov) -> np.ndarray:
    r_s = np.asarray(sensing_cov, dtype=complex)
    if r_s.ndim != 2 or r_s.shape[0] != r_s.shape[1]:
        raise ValueError("sensing covariance must be square")
    if not _is_hermitian(r_s, 1e-9):
        raise ValueError("sensing covariance is not Hermitian")
    total = r_s.copy()
    for f in beamformers:
        f = np.asarray(f, dtype=complex)
        if f.shape != (r_s.shape[0],):
            raise ValueError("beamformer dimension does not match covariance")
        total += np.outer(f, f.conj())
    return (total + total.conj().T) / 2


def quad(h, r, g=None) -> complex:
    """h^T R g^* (g defaults to h)."""
    g = h if g is None else g
    return np.asarray(h) @ r @ np.conj(g)


def sinr(k: int, design: TransmitDesign, channel, noise_power: float) -> float:
    """SINR of user ``k`` whose effective channel is ``channel``."""
    if not noise_power > 0:
        raise ValueError("noise power must be positive")
    h = np.asarray(channel)
    gains = np.abs(np.array([h @ f for f in design.beamformers])) ** 2
    signal = gains[k]
    interference = gains.sum() - signal + quad(h, design.sensing_cov).real
    return float(signal / (interference + noise_power))


def rate(sinr_value):
    if np.any(np.asarray(sinr_value) < 0):
        raise ValueError("SINR must be non-negative")
    return np.log2(1.0 + np.asarray(sinr_value, dtype=float))


def rate_to_sinr_threshold(min_rate: float) -> tuple[float, float]:
    """Return (Gamma, xi) with Gamma = 2^R - 1 and xi = 2^R / (2^R - 1)."""
    if not min_rate > 0:
        raise ValueError("minimum rate must be positive")
    two_r = 2.0 ** min_rate
    gamma = two_r - 1.0
    return gamma, two_r / gamma


def beampattern_gain(total_cov, channel) -> float:
    value = quad(channel, total_cov)
    scale = max(abs(value), np.linalg.norm(channel) ** 2 * np.abs(total_cov).max(initial=0.0), 1e-300)
    if abs(value.imag) > 1e-9 * scale:
        raise ValueError("covariance is not Hermitian: gain has an imaginary part")
    return float(value.real)


def cross_correlation(total_cov, channel_a, channel_b) -> complex:
    return complex(quad(channel_a, total_cov, channel_b))


def worst_case_gain(total_cov, target_channels: dict, weights: SensingWeights) -> float:
    """mu = min_l w_l * gain_l."""
    if not target_channels:
        return float("inf")
    return min(weights.gain(n) * beampattern_gain(total_cov, h) for n, h in target_channels.items())


def target_pairs(names, skip=()) -> list[tuple[str, str]]:
    skip = {frozenset(p) for p in skip}
    return [(a, b) for a, b in itertools.combinations(names, 2) if frozenset((a, b)) not in skip]


@dataclass
class FeasibilityReport:
    rates: dict
    min_rates: dict
    sinrs: dict
    power: float
    p_max: float
    gains: dict
    mu: float
    cross: dict
    epsilon: float
    tol: float = 1e-7

    @property
    def rate_margins(self) -> dict:
        return {k: self.rates[k] - self.min_rates[k] for k in self.rates}

    @property
    def cross_ratios(self) -> dict:
        """w * |cross| / (epsilon * mu) per constrained pair; <= 1 means satisfied."""
        return {k: v / (self.epsilon * self.mu) if self.mu > 0 else np.inf for k, v in self.cross.items()}

    def violations(self) -> dict:
        out = {}
        for k, m in self.rate_margins.items():
            if m < -self.tol:
                out[f"rate:{k}"] = -m
        if self.power > self.p_max * (1 + self.tol):
            out["power"] = self.power - self.p_max
        for k, r in self.cross_ratios.items():
            if r > 1 + self.tol:
                out[f"cross:{k}"] = r - 1
        return out

    @property
    def feasible(self) -> bool:
        return not self.violations()

    def to_dict(self) -> dict:
        flat = {"feasible": self.feasible, "power_w": self.power, "p_max_w": self.p_max,
                "mu": self.mu, "epsilon": self.epsilon}
        for k in self.rates:
            flat[f"rate[{k}]"] = float(self.rates[k])
            flat[f"min_rate[{k}]"] = float(self.min_rates[k])
            flat[f"sinr[{k}]"] = float(self.sinrs[k])
        for k, g in self.gains.items():
            flat[f"gain[{k}]"] = float(g)
        for k, c in self.cross.items():
            flat[f"cross[{k}]"] = float(c)
            flat[f"cross_ratio[{k}]"] = float(self.cross_ratios[k])
        return flat


def feasibility_report(scenario, design: TransmitDesign, ris_state, channels,
                       weights: SensingWeights | None = None, skip_pairs=(),
                       drop_pairs: bool = False, min_rates: dict | None = None,
                       tol: float = 1e-7) -> FeasibilityReport:
    """Evaluate every constraint of the joint problem for a concrete design.

    ``skip_pairs``/``drop_pairs`` and ``min_rates`` mirror the constraint set
    the design was optimized for (benchmarks relax some of them).
    """
    from .channels import effective_tx_channel

    weights = weights or scenario.weights
    h = {e.name: effective_tx_channel(e.name, ris_state, channels)
         for e in (*scenario.users, *scenario.targets)}
    sinrs, rates, req = {}, {}, {}
    for k, u in enumerate(scenario.users):
        sinrs[u.name] = sinr(k, design, h[u.name], u.noise_power)
        rates[u.name] = float(rate(sinrs[u.name]))
        req[u.name] = (min_rates or {}).get(u.name, u.min_rate)
    gains = {t.name: beampattern_gain(design.total_cov, h[t.name]) for t in scenario.targets}
    mu = min((weights.gain(n) * g for n, g in gains.items()), default=float("inf"))
    pairs = [] if drop_pairs else target_pairs([t.name for t in scenario.targets], skip_pairs)
    cross = {f"{a},{b}": weights.pair(a, b) * abs(cross_correlation(design.total_cov, h[a], h[b]))
             for a, b in pairs}
    return FeasibilityReport(rates=rates, min_rates=req, sinrs=sinrs,
                             power=float(np.trace(design.total_cov).real), p_max=scenario.p_max,
                             gains=gains, mu=mu, cross=cross, epsilon=weights.epsilon, tol=tol)

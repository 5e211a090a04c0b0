"""Spherical-wavefront channel construction and RIS-dependent composition.

Vector conventions: a transmit channel ``h`` acts as ``h^T x`` on the
transmitted vector; a receive channel multiplies the scalar echo.  The LoS
indicator is not folded into the stored LoS vectors, it is applied when the
effective channels are composed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayGeometry, PointEntity, Wave, pathloss_phase, radiation_pattern


@dataclass(frozen=True)
class RisState:
    """RIS configuration stored as phases theta (radians)."""

    phases: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=float).ravel())

    @property
    def phi(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def num_elements(self) -> int:
        return self.phases.size

    @classmethod
    def zeros(cls, n: int) -> "RisState":
        return cls(np.zeros(n))

    @classmethod
    def from_phi(cls, phi) -> "RisState":
        return cls(np.angle(np.asarray(phi)))


def _check_separated(points: np.ndarray, array: ArrayGeometry, what: str):
    d = np.linalg.norm(points[..., None, :] - array.element_positions, axis=-1)
    if np.any(d == 0):
        raise ValueError(f"{what}: position coincides with an array element")


def los_tx_channel(position, tx: ArrayGeometry, wave: Wave) -> np.ndarray:
    """Direct BS-transmit -> point channel, one entry per transmit element."""
    p = np.asarray(position, dtype=float)
    _check_separated(p, tx, "los_tx_channel")
    d = p - tx.element_positions
    return np.sqrt(radiation_pattern(d, tx.normal, tx.pattern_exponent)) * pathloss_phase(d, wave.wavelength)


def los_rx_channel(position, rx: ArrayGeometry, wave: Wave) -> np.ndarray:
    """Direct point -> BS-receive channel.

    The element pattern is evaluated on the element-to-point direction, so a
    receive array identical to the transmit array gives the same vector.
    """
    p = np.asarray(position, dtype=float)
    _check_separated(p, rx, "los_rx_channel")
    d = rx.element_positions - p
    return np.sqrt(radiation_pattern(-d, rx.normal, rx.pattern_exponent)) * pathloss_phase(d, wave.wavelength)


def ris_link_channel(position, ris: ArrayGeometry, wave: Wave) -> np.ndarray:
    """RIS <-> point channel, one entry per RIS element."""
    p = np.asarray(position, dtype=float)
    _check_separated(p, ris, "ris_link_channel")
    d = p - ris.element_positions
    return np.sqrt(radiation_pattern(d, ris.normal, ris.pattern_exponent)) * pathloss_phase(d, wave.wavelength)


def _array_link(src: ArrayGeometry, dst: ArrayGeometry, wave: Wave) -> np.ndarray:
    # entry [dst, src]: one pathloss factor, departure pattern at src, arrival at dst
    d = dst.element_positions[:, None, :] - src.element_positions[None, :, :]
    if np.any(np.linalg.norm(d, axis=-1) == 0):
        raise ValueError("arrays overlap: coincident elements")
    return (pathloss_phase(d, wave.wavelength)
            * np.sqrt(radiation_pattern(d, src.normal, src.pattern_exponent))
            * np.sqrt(radiation_pattern(-d, dst.normal, dst.pattern_exponent)))


def bs_ris_matrix(tx: ArrayGeometry, ris: ArrayGeometry, wave: Wave) -> np.ndarray:
    """BS-transmit -> RIS matrix G_t, shape (N_s, N_t)."""
    return _array_link(tx, ris, wave)


def ris_bs_rx_matrix(ris: ArrayGeometry, rx: ArrayGeometry, wave: Wave) -> np.ndarray:
    """RIS -> BS-receive matrix G_r, shape (N_r, N_s)."""
    return _array_link(ris, rx, wave)


@dataclass(frozen=True)
class ChannelSet:
    """Static channel components of a scenario, keyed by entity name.

    ``affine[a]`` is the matrix A_a = G_t^T diag(h_{s,a}) so that the
    effective transmit channel reads alpha_a * los_tx[a] + A_a @ phi.
    """

    los_tx: dict
    los_rx: dict
    ris_link: dict
    bs_ris: np.ndarray
    ris_bs_rx: np.ndarray
    alpha: dict
    affine: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.affine:
            for name, hs in self.ris_link.items():
                self.affine[name] = self.bs_ris.T * hs[None, :]
        for name, a in self.affine.items():
            ref = self.bs_ris.T @ np.diag(self.ris_link[name])
            if not np.allclose(a, ref, rtol=1e-12, atol=0):
                raise ValueError(f"affine matrix of {name!r} inconsistent with G_t and h_s")
        for arr in (*self.los_tx.values(), *self.los_rx.values(), *self.ris_link.values(),
                    self.bs_ris, self.ris_bs_rx):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite channel entry")

    @property
    def num_tx(self) -> int:
        return self.bs_ris.shape[1]

    @property
    def num_rx(self) -> int:
        return self.ris_bs_rx.shape[0]

    @property
    def num_ris(self) -> int:
        return self.bs_ris.shape[0]

    def direct_tx(self, name: str) -> np.ndarray:
        """alpha_a times the LoS transmit vector."""
        return self.alpha[name] * self.los_tx[name]

    def direct_rx(self, name: str) -> np.ndarray:
        return self.alpha[name] * self.los_rx[name]


def build_channel_set(scenario, wave: Wave | None = None, warn_far_field: bool = True) -> ChannelSet:
    """Build every static channel component for ``scenario``."""
    wave = wave or scenario.wave
    entities: list[PointEntity] = [*scenario.users, *scenario.targets]
    if warn_far_field:
        r_rl = scenario.rayleigh_distance()
        center = scenario.tx.center
        for e in entities:
            if np.linalg.norm(e.position - center) > r_rl:
                warnings.warn(f"{e.name} lies beyond the Rayleigh distance ({r_rl:.3f} m)")
    los_tx = {e.name: los_tx_channel(e.position, scenario.tx, wave) for e in entities}
    los_rx = {e.name: los_rx_channel(e.position, scenario.rx, wave) for e in scenario.targets}
    ris_link = {e.name: ris_link_channel(e.position, scenario.ris, wave) for e in entities}
    return ChannelSet(
        los_tx=los_tx,
        los_rx=los_rx,
        ris_link=ris_link,
        bs_ris=bs_ris_matrix(scenario.tx, scenario.ris, wave),
        ris_bs_rx=ris_bs_rx_matrix(scenario.ris, scenario.rx, wave),
        alpha={e.name: e.los_available for e in entities},
    )


def _phi(ris_state, n: int) -> np.ndarray:
    phi = ris_state.phi if isinstance(ris_state, RisState) else np.asarray(ris_state, dtype=complex)
    if phi.shape != (n,):
        raise ValueError(f"RIS state has {phi.size} elements, channel set expects {n}")
    return phi


def effective_tx_channel(name: str, ris_state, channels: ChannelSet) -> np.ndarray:
    """alpha_a h_bar_{t,a} + (h_{s,a}^T Phi G_t)^T."""
    phi = _phi(ris_state, channels.num_ris)
    return channels.direct_tx(name) + channels.affine[name] @ phi


def effective_tx_channel_diag(name: str, ris_state, channels: ChannelSet) -> np.ndarray:
    """Same channel evaluated through the explicit diagonal reflection matrix."""
    phi = _phi(ris_state, channels.num_ris)
    hs = channels.ris_link[name]
    return channels.direct_tx(name) + (hs @ np.diag(phi) @ channels.bs_ris).T


def effective_rx_channel(name: str, ris_state, channels: ChannelSet) -> np.ndarray:
    """alpha_l h_bar_{l,r} + G_r Phi h_{s,l}."""
    phi = _phi(ris_state, channels.num_ris)
    return channels.direct_rx(name) + channels.ris_bs_rx @ (phi * channels.ris_link[name])


def roundtrip_channel(target: PointEntity, ris_state, channels: ChannelSet) -> np.ndarray:
    """H_l = gamma_l h_{l,r}(Phi) h_{t,l}(Phi)^T, shape (N_r, N_t)."""
    h_r = effective_rx_channel(target.name, ris_state, channels)
    h_t = effective_tx_channel(target.name, ris_state, channels)
    return target.rcs * np.outer(h_r, h_t)


def virtual_channels(points, scenario, ris_state, channels: ChannelSet,
                     receive: bool = False) -> np.ndarray:
    """Effective channels of virtual entities at ``points`` (P x 3).

    Returns a (P, N) array; the scenario's blockage rule sets each point's
    LoS indicator.  Used for SINR maps and Capon steering.
    """
    from .geometry import los_indicator

    points = np.atleast_2d(np.asarray(points, dtype=float))
    phi = _phi(ris_state, channels.num_ris)
    ris, wave = scenario.ris, scenario.wave
    d_s = points[:, None, :] - ris.element_positions[None]
    hs = np.sqrt(radiation_pattern(d_s, ris.normal, ris.pattern_exponent)) * pathloss_phase(d_s, wave.wavelength)
    alpha = np.array([los_indicator(p, scenario.blockage_rule) for p in points], dtype=float)
    if receive:
        arr = scenario.rx
        d = arr.element_positions[None] - points[:, None, :]
        los = np.sqrt(radiation_pattern(-d, arr.normal, arr.pattern_exponent)) * pathloss_phase(d, wave.wavelength)
        ris_path = (hs * phi) @ channels.ris_bs_rx.T
    else:
        arr = scenario.tx
        d = points[:, None, :] - arr.element_positions[None]
        los = np.sqrt(radiation_pattern(d, arr.normal, arr.pattern_exponent)) * pathloss_phase(d, wave.wavelength)
        ris_path = (hs * phi) @ channels.bs_ris
    return alpha[:, None] * los + ris_path

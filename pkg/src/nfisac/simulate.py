"""Waveform simulation, spatial maps and the three benchmark configurations.

Everything here evaluates a finished design: transmit blocks and target
echoes follow the linear models of :mod:`nfisac.channels`, Capon spectra
and SINR maps are evaluated on a planar grid, and :func:`run_benchmark`
wires the optimizer to the proposed / far-field / no-cross-correlation
configurations.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .channels import (ChannelSet, RisState, roundtrip_channel, virtual_channels)
from .geometry import ArrayGeometry, pathloss_phase, radiation_pattern
from .metrics import TransmitDesign, sinr
from .optimizer import AoConfig, AoResult, ConstraintSet, alternating_optimize

METHODS = ("proposed", "ffbf", "nccs")
FFBF_MIN_RATE = 0.95


# -- transmit blocks and echoes ----------------------------------------------

@dataclass
class SignalBlock:
    symbols: np.ndarray          # K x T
    sensing_samples: np.ndarray  # N_t x T
    transmit: np.ndarray         # N_t x T
    rng_seed: int

    @property
    def length(self) -> int:
        return self.transmit.shape[1]


@dataclass
class EchoBlock:
    received: np.ndarray  # N_r x T
    noise_power: float
    sample_cov: np.ndarray = field(init=False)

    def __post_init__(self):
        t = self.received.shape[1]
        self.sample_cov = self.received @ self.received.conj().T / t


def _psd_factor(r: np.ndarray, tol: float = 1e-8, scale: Optional[float] = None) -> np.ndarray:
    """L with L L^H = R for a Hermitian PSD R (tiny negative eigenvalues clipped).

    Negative eigenvalues are tolerated down to ``-tol * scale``; ``scale``
    defaults to tr(R) but callers pass tr(R_x) when R is a residual part of it.
    """
    r = (np.asarray(r, dtype=complex) + np.asarray(r, dtype=complex).conj().T) / 2
    vals, vecs = np.linalg.eigh(r)
    scale = max(np.trace(r).real if scale is None else scale, 0.0)
    if vals.size and vals.min() < -tol * max(scale, 1e-300):
        raise ValueError(f"sensing covariance is not PSD (min eigenvalue {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]


def _circular_gaussian(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def generate_transmit_block(design: TransmitDesign, length: int, seed: int = 0,
                            symbols: str = "gaussian") -> SignalBlock:
    """x[t] = sum_k f_k c_k[t] + s[t] with unit-power symbols and cov(s) = R_s.

    ``symbols`` selects circular Gaussian or unit-modulus QPSK data.
    """
    if length < 1:
        raise ValueError("block length must be >= 1")
    rng = np.random.default_rng(seed)
    k = len(design.beamformers)
    n_t = design.num_tx
    if symbols == "gaussian":
        c = _circular_gaussian(rng, (k, length))
    elif symbols == "psk":
        c = np.exp(0.5j * np.pi * (rng.integers(0, 4, (k, length)) + 0.5))
    else:
        raise ValueError(f"unknown symbol distribution {symbols!r}")
    s = _psd_factor(design.sensing_cov, scale=np.trace(design.total_cov).real)
    s = s @ _circular_gaussian(rng, (n_t, length))
    f = np.array(design.beamformers).T if k else np.zeros((n_t, 0))
    return SignalBlock(c, s, f @ c + s, seed)


def simulate_echoes(block: SignalBlock, targets, ris_state, channels: ChannelSet,
                    noise_power: float, seed: int = 0) -> EchoBlock:
    """y_r[t] = sum_l H_l(Phi) x[t] + n_r[t]."""
    if noise_power < 0:
        raise ValueError("noise power must be non-negative")
    n_r = channels.num_rx
    h = np.zeros((n_r, channels.num_tx), dtype=complex)
    for t in targets:
        h += roundtrip_channel(t, ris_state, channels)
    y = h @ block.transmit
    if noise_power > 0:
        rng = np.random.default_rng(seed)
        y = y + np.sqrt(noise_power) * _circular_gaussian(rng, y.shape)
    return EchoBlock(y, noise_power)


# -- spatial grids -----------------------------------------------------------

@dataclass(frozen=True)
class SpatialGrid:
    """Rectangular grid on the plane x = ``x`` spanned by the y and z axes."""

    y_range: tuple = (0.0, 0.25)
    z_range: tuple = (0.0, 0.25)
    ny: int = 101
    nz: int = 101
    x: float = 0.0

    def __post_init__(self):
        if self.ny < 2 or self.nz < 2:
            raise ValueError("grid resolution must be >= 2 per axis")
        vals = (*self.y_range, *self.z_range, self.x)
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid ranges must be finite")
        if not (self.y_range[1] > self.y_range[0] and self.z_range[1] > self.z_range[0]):
            raise ValueError("grid ranges must be increasing")

    @property
    def y(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.ny)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(*self.z_range, self.nz)

    @property
    def shape(self) -> tuple:
        return (self.nz, self.ny)

    @property
    def cell(self) -> tuple:
        return (self.y[1] - self.y[0], self.z[1] - self.z[0])

    def points(self) -> np.ndarray:
        """(nz * ny, 3) positions, row-major over (z, y)."""
        zz, yy = np.meshgrid(self.z, self.y, indexing="ij")
        return np.stack([np.full(yy.size, self.x), yy.ravel(), zz.ravel()], axis=1)

    def nearest_index(self, position) -> tuple:
        p = np.asarray(position, dtype=float)
        return (int(np.argmin(np.abs(self.z - p[2]))), int(np.argmin(np.abs(self.y - p[1]))))


def _drop_coincident(points: np.ndarray, arrays) -> np.ndarray:
    """Mask of grid points that do not sit exactly on an array element."""
    ok = np.ones(len(points), dtype=bool)
    for arr in arrays:
        d = np.linalg.norm(points[:, None, :] - arr.element_positions[None], axis=-1)
        ok &= d.min(axis=1) > 0
    return ok


# -- Capon spectrum ----------------------------------------------------------

@dataclass
class CaponSpectrum:
    raw: np.ndarray          # max-normalized 1 / (a^H R^-1 a)
    compensated: np.ndarray  # same, multiplied by |a|^2 before normalization
    grid: SpatialGrid
    loading: float

    def peaks(self, compensated: bool = False, **kw) -> list:
        return local_maxima(self.compensated if compensated else self.raw, self.grid, **kw)


def capon_spectrum(echo: EchoBlock, grid: SpatialGrid, scenario, ris_state, channels: ChannelSet,
                   loading: float = 1e-3) -> CaponSpectrum:
    """Minimum-variance spectrum over ``grid``.

    The steering vector at each point is the effective receive channel of a
    virtual target there (same blockage rule as the scenario); the sample
    covariance is diagonally loaded with ``loading * tr(R) / N_r``.
    """
    r = (echo.sample_cov + echo.sample_cov.conj().T) / 2
    n_r = r.shape[0]
    delta = loading * np.trace(r).real / n_r
    r_loaded = r + delta * np.eye(n_r)
    try:
        chol = np.linalg.cholesky(r_loaded)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sample covariance is singular even after diagonal loading") from exc
    pts = grid.points()
    ok = _drop_coincident(pts, [scenario.ris, scenario.rx])
    a = np.zeros((len(pts), n_r), dtype=complex)
    a[ok] = virtual_channels(pts[ok], scenario, ris_state, channels, receive=True)
    # a^H R^-1 a = |L^-1 a|^2
    w = np.linalg.solve(chol, a.T)
    denom = np.sum(np.abs(w) ** 2, axis=0)
    energy = np.sum(np.abs(a) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(denom > 0, 1.0 / denom, 0.0)
        comp = np.where(denom > 0, energy / denom, 0.0)
    return CaponSpectrum(_normalize(raw).reshape(grid.shape), _normalize(comp).reshape(grid.shape),
                         grid, delta)


def _normalize(v: np.ndarray) -> np.ndarray:
    m = v.max(initial=0.0)
    return v / m if m > 0 else v


def local_maxima(values: np.ndarray, grid: SpatialGrid, min_relative: float = 1e-3,
                 max_peaks: Optional[int] = None) -> list:
    """Strict 8-neighbour local maxima, strongest first, as (y, z, value)."""
    v = np.asarray(values, dtype=float)
    padded = np.pad(v, 1, constant_values=-np.inf)
    neigh = ndimage.maximum_filter(padded, footprint=np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]]),
                                   mode="constant", cval=-np.inf)[1:-1, 1:-1]
    mask = (v > neigh) & (v >= min_relative * v.max(initial=0.0)) & (v > 0)
    iz, iy = np.nonzero(mask)
    order = np.argsort(-v[iz, iy], kind="stable")
    out = [(float(grid.y[iy[i]]), float(grid.z[iz[i]]), float(v[iz[i], iy[i]])) for i in order]
    return out[:max_peaks] if max_peaks else out


def match_peaks(peaks: list, positions, tolerance: float) -> dict:
    """For every true position, the nearest peak (y, z) and its distance."""
    out = {}
    for i, p in enumerate(positions):
        p = np.asarray(p, dtype=float)
        if not peaks:
            out[i] = (None, np.inf)
            continue
        d = [np.hypot(y - p[1], z - p[2]) for y, z, _ in peaks]
        j = int(np.argmin(d))
        out[i] = (peaks[j][:2], float(d[j]))
    return {k: (v[0], v[1], v[1] <= tolerance) for k, v in out.items()}


# -- SINR maps ---------------------------------------------------------------

def sinr_map(design: TransmitDesign, scenario, ris_state, channels: ChannelSet, grid: SpatialGrid,
             probe_noise: Optional[float] = None) -> dict:
    """Per-user SINR of a virtual user placed at every grid point."""
    pts = grid.points()
    ok = _drop_coincident(pts, [scenario.ris, scenario.tx])
    h = np.zeros((len(pts), channels.num_tx), dtype=complex)
    h[ok] = virtual_channels(pts[ok], scenario, ris_state, channels)
    gains = np.abs(h @ np.array(design.beamformers).T) ** 2 if design.beamformers else np.zeros((len(pts), 0))
    sensing = np.einsum("pi,ij,pj->p", h, design.sensing_cov, h.conj()).real
    total = gains.sum(axis=1) + sensing
    maps = {}
    for k, u in enumerate(scenario.users):
        noise = u.noise_power if probe_noise is None else probe_noise
        maps[u.name] = (gains[:, k] / (total - gains[:, k] + noise)).reshape(grid.shape)
    return maps


def sinr_at(design: TransmitDesign, channel, noise_power: float) -> list:
    """SINR of every stream at a single channel (helper for map spot checks)."""
    return [sinr(k, design, channel, noise_power) for k in range(len(design.beamformers))]


# -- far-field channel model -------------------------------------------------

def _planar(array: ArrayGeometry, target, wavelength: float) -> np.ndarray:
    """Planar-wave array response toward ``target``.

    Pathloss and pattern are evaluated once at the array centre; element n at
    offset delta_n gets the extra phase +2 pi / lambda * (u . delta_n), where
    u points from the centre toward ``target`` (the first-order expansion of
    the spherical phase -2 pi |p - p_n| / lambda).
    """
    c = array.center
    d = np.asarray(target, dtype=float) - c
    dist = np.linalg.norm(d)
    if dist == 0:
        raise ValueError("entity coincides with an array centre")
    u = d / dist
    offsets = array.element_positions - c
    amp = pathloss_phase(d, wavelength) * np.sqrt(radiation_pattern(d, array.normal, array.pattern_exponent))
    return amp * np.exp(2j * np.pi * (offsets @ u) / wavelength)


def _planar_link(bs: ArrayGeometry, ris: ArrayGeometry, wavelength: float) -> np.ndarray:
    """BS-array <-> RIS matrix with a planar wavefront across the BS aperture.

    Each RIS element is treated as a point in the far field of the BS array
    (row n_s is the planar BS response toward that element, times the RIS
    element's arrival pattern toward the BS centre).  Making the RIS side
    planar as well would collapse the link to rank one and align every
    RIS-routed channel, which no constraint set could then separate.
    Shape (N_s, N_bs).
    """
    rows = []
    for p in ris.element_positions:
        arrival = np.sqrt(radiation_pattern(bs.center - p, ris.normal, ris.pattern_exponent))
        rows.append(arrival * _planar(bs, p, wavelength))
    return np.array(rows)


def far_field_channels(scenario) -> ChannelSet:
    """ChannelSet rebuilt with planar wavefronts (range-blind model)."""
    lam = scenario.wave.wavelength
    entities = [*scenario.users, *scenario.targets]
    los_tx = {e.name: _planar(scenario.tx, e.position, lam) for e in entities}
    # the receive pattern uses the element-to-point direction, as in the near-field model
    los_rx = {t.name: _planar(scenario.rx, t.position, lam) for t in scenario.targets}
    ris_link = {e.name: _planar(scenario.ris, e.position, lam) for e in entities}
    return ChannelSet(
        los_tx=los_tx, los_rx=los_rx, ris_link=ris_link,
        bs_ris=_planar_link(scenario.tx, scenario.ris, lam),
        ris_bs_rx=_planar_link(scenario.rx, scenario.ris, lam).T,
        alpha={e.name: e.los_available for e in entities},
    )


# -- benchmarks --------------------------------------------------------------

def method_config(scenario, method: str, config: Optional[AoConfig] = None) -> AoConfig:
    """AoConfig with the constraint changes each benchmark prescribes."""
    config = config or AoConfig()
    if method == "proposed":
        return config
    if method == "nccs":
        return replace(config, constraints=ConstraintSet(drop_pairs=True,
                                                         min_rates=config.constraints.min_rates))
    if method == "ffbf":
        names = [t.name for t in scenario.targets]
        skip = ((names[0], names[1]),) if len(names) >= 2 else ()
        rates = {u.name: FFBF_MIN_RATE for u in scenario.users}
        return replace(config, constraints=ConstraintSet(skip_pairs=skip, min_rates=rates))
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


@dataclass
class BenchmarkResult:
    method: str
    ao: AoResult
    config: AoConfig
    grid: SpatialGrid
    sinr_maps: dict
    capon: Optional[CaponSpectrum]
    echo_seed: int
    runtime: dict
    eval_channels: Optional[ChannelSet] = None


def run_benchmark(scenario, method: str = "proposed", config: Optional[AoConfig] = None,
                  grid: Optional[SpatialGrid] = None, seed: int = 0, backend=None,
                  with_capon: bool = True, with_sinr: bool = True, on_record=None,
                  channels: Optional[ChannelSet] = None) -> BenchmarkResult:
    """Optimize with the method's channel model and constraints, evaluate on near-field channels."""
    from .channels import build_channel_set

    cfg = method_config(scenario, method, config)
    grid = grid or SpatialGrid()
    near = channels or build_channel_set(scenario, warn_far_field=False)
    opt_channels = far_field_channels(scenario) if method == "ffbf" else near
    times = {}
    t0 = time.perf_counter()
    ao = alternating_optimize(scenario, cfg, opt_channels, backend, eval_channels=near, on_record=on_record)
    times["optimize_s"] = time.perf_counter() - t0
    maps, capon = {}, None
    if with_sinr:
        t0 = time.perf_counter()
        maps = sinr_map(ao.final_design, scenario, ao.final_ris, near, grid)
        times["sinr_map_s"] = time.perf_counter() - t0
    if with_capon:
        t0 = time.perf_counter()
        block = generate_transmit_block(ao.final_design, scenario.block_length, seed)
        echo = simulate_echoes(block, scenario.targets, ao.final_ris, near, scenario.sensing_noise, seed + 1)
        capon = capon_spectrum(echo, grid, scenario, ao.final_ris, near)
        times["capon_s"] = time.perf_counter() - t0
    return BenchmarkResult(method, ao, cfg, grid, maps, capon, seed, times, near)


# -- export ------------------------------------------------------------------

def write_grid_csv(path, grid: SpatialGrid, values: np.ndarray, fmt: str = "{:.12e}"):
    """CSV with header y,z,value, one row per grid point (z-major)."""
    path = Path(path)
    v = np.asarray(values, dtype=float)
    if v.shape != grid.shape:
        raise ValueError(f"values have shape {v.shape}, grid is {grid.shape}")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "z", "value"])
        for iz, z in enumerate(grid.z):
            for iy, y in enumerate(grid.y):
                w.writerow([fmt.format(y), fmt.format(z), fmt.format(v[iz, iy])])


def grid_to_json(grid: SpatialGrid, values: np.ndarray) -> dict:
    return {"y": grid.y.tolist(), "z": grid.z.tolist(), "x": grid.x,
            "values": np.asarray(values, dtype=float).tolist()}


def write_echo(path, echo: EchoBlock, seed: int):
    """Binary complex128 matrix (row-major N_r x T) plus a JSON sidecar."""
    path = Path(path)
    np.ascontiguousarray(echo.received, dtype=np.complex128).tofile(path)
    sidecar = {"rows": echo.received.shape[0], "cols": echo.received.shape[1], "dtype": "complex128",
               "order": "C", "seed": seed, "noise_power_w": echo.noise_power}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

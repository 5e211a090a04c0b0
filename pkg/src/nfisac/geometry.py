"""Array geometry and elementary propagation quantities.

Everything here is a pure function of its inputs.  Positions are in meters,
angles in radians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

USER = "user"
TARGET = "target"


def _unit(w, tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {w.shape}")
    if abs(np.linalg.norm(w) - 1.0) > tol:
        raise ValueError(f"normal vector {w} is not unit length")
    return w


@dataclass(frozen=True)
class ArrayGeometry:
    """Planar array: element positions (N x 3) and the shared normal."""

    element_positions: np.ndarray
    normal: np.ndarray
    pattern_exponent: float = 2.0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.element_positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("element_positions must be N x 3")
        object.__setattr__(self, "element_positions", pos)
        object.__setattr__(self, "normal", _unit(self.normal))
        if self.pattern_exponent < 0:
            raise ValueError("pattern exponent must be non-negative")
        if len(pos) > 1:
            d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
            d[np.diag_indices(len(pos))] = np.inf
            if d.min() <= 0:
                raise ValueError("array elements must be distinct")

    @property
    def num_elements(self) -> int:
        return self.element_positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.element_positions.mean(axis=0)


@dataclass(frozen=True)
class Wave:
    wavelength: float

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")

    @classmethod
    def from_frequency(cls, frequency_hz: float, c: float = SPEED_OF_LIGHT) -> "Wave":
        return cls(c / frequency_hz)


@dataclass
class PointEntity:
    """A user or a target located at ``position``.

    ``los_available`` is the binary LoS indicator (1 = direct path exists).
    Users carry ``noise_power`` (W) and ``min_rate`` (bit/s/Hz); targets
    carry the complex reflectivity ``rcs``.
    """

    name: str
    position: np.ndarray
    role: str
    los_available: int = 1
    rcs: complex = 1.0
    noise_power: Optional[float] = None
    min_rate: Optional[float] = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape != (3,):
            raise ValueError(f"{self.name}: position must be a 3-vector")
        if self.role not in (USER, TARGET):
            raise ValueError(f"{self.name}: role must be 'user' or 'target'")
        if self.los_available not in (0, 1):
            raise ValueError(f"{self.name}: los_available must be 0 or 1")
        self.los_available = int(self.los_available)
        if self.role == USER:
            if self.noise_power is None or not self.noise_power > 0:
                raise ValueError(f"{self.name}: users need noise_power > 0")
            if self.min_rate is None or not self.min_rate > 0:
                raise ValueError(f"{self.name}: users need min_rate > 0")


def _row_col_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # column axis = normal x z (or normal x x when normal is along z)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(normal @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    col_axis = np.cross(normal, ref)
    col_axis /= np.linalg.norm(col_axis)
    row_axis = np.cross(normal, col_axis)
    return row_axis, col_axis


def build_upa(rows: int, cols: int, spacing: float, center, normal,
              pattern_exponent: float = 2.0) -> ArrayGeometry:
    """Uniform planar array centered at ``center``, orthogonal to ``normal``.

    Elements are ordered row-major: index ``r * cols + c``.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    normal = _unit(normal)
    center = np.asarray(center, dtype=float)
    row_axis, col_axis = _row_col_axes(normal)
    r = (np.arange(rows) - (rows - 1) / 2) * spacing
    c = (np.arange(cols) - (cols - 1) / 2) * spacing
    rr, cc = np.meshgrid(r, c, indexing="ij")
    pos = center + rr.reshape(-1, 1) * row_axis + cc.reshape(-1, 1) * col_axis
    return ArrayGeometry(pos, normal, pattern_exponent)


def angle_between(p, w) -> np.ndarray:
    """Angle between direction(s) ``p`` (..., 3) and unit vector ``w``."""
    p = np.asarray(p, dtype=float)
    norm = np.linalg.norm(p, axis=-1)
    if np.any(norm == 0):
        raise ValueError("angle undefined for a zero-length direction")
    cos = np.clip((p @ np.asarray(w, dtype=float)) / norm, -1.0, 1.0)
    return np.arccos(cos)


def radiation_pattern(p, w, b: float = 2.0) -> np.ndarray:
    """Element gain 2(b+1) cos^b(psi) inside the front hemisphere, 0 behind."""
    p = np.asarray(p, dtype=float)
    norm = np.linalg.norm(p, axis=-1)
    if np.any(norm == 0):
        raise ValueError("pattern undefined for a zero-length direction")
    # cosine taken directly (not via arccos) so that p.w <= 0 gives exactly 0
    cos = (p @ np.asarray(w, dtype=float)) / norm
    return np.where(cos > 0, 2.0 * (b + 1.0) * np.clip(cos, 0.0, None) ** b, 0.0)


def pathloss_phase(p, wavelength: float) -> np.ndarray:
    """Free-space amplitude lambda/(4 pi |p|) with phase -2 pi |p| / lambda."""
    d = np.linalg.norm(np.asarray(p, dtype=float), axis=-1)
    if np.any(d == 0):
        raise ValueError("path length must be positive")
    # reduce the phase argument first so that whole wavelengths cancel exactly
    cycles = np.mod(d / wavelength, 1.0)
    return wavelength / (4 * np.pi * d) * np.exp(-2j * np.pi * cycles)


def upa_aperture(rows: int, cols: int, spacing: float, convention: str = "full") -> float:
    """Diagonal aperture of a UPA.

    ``"full"`` counts N * spacing per side (each element owns one cell);
    ``"centers"`` counts (N - 1) * spacing, the extent of element centers.
    """
    if convention == "full":
        return float(np.hypot(rows * spacing, cols * spacing))
    if convention == "centers":
        return float(np.hypot((rows - 1) * spacing, (cols - 1) * spacing))
    raise ValueError(f"unknown aperture convention {convention!r}")


def rayleigh_distance(aperture: float, wavelength: float) -> float:
    if not (aperture > 0 and wavelength > 0):
        raise ValueError("aperture and wavelength must be positive")
    return 2.0 * aperture**2 / wavelength


def blocked_if_y_nonnegative(position) -> bool:
    return bool(np.asarray(position)[1] >= 0)


def never_blocked(position) -> bool:
    return False


BLOCKAGE_RULES: dict[str, Callable[[np.ndarray], bool]] = {
    "y_nonnegative": blocked_if_y_nonnegative,
    "none": never_blocked,
}


def los_indicator(position, rule: str | Callable = "none") -> int:
    pred = BLOCKAGE_RULES[rule] if isinstance(rule, str) else rule
    return 0 if pred(position) else 1

"""Full system description shared by every stage."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (TARGET, USER, ArrayGeometry, PointEntity, Wave, rayleigh_distance)
from .metrics import SensingWeights


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * np.log10(watts) + 30.0


@dataclass
class Scenario:
    wave: Wave
    tx: ArrayGeometry
    rx: ArrayGeometry
    ris: ArrayGeometry
    users: list
    targets: list
    p_max: float
    sensing_noise: float
    weights: SensingWeights = field(default_factory=SensingWeights)
    blockage_rule: str = "none"
    block_length: int = 1000
    bs_aperture: Optional[float] = None
    name: str = "scenario"

    def __post_init__(self):
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")
        if self.sensing_noise < 0:
            raise ValueError("sensing noise power must be non-negative")
        names = [e.name for e in (*self.users, *self.targets)]
        if len(set(names)) != len(names):
            raise ValueError("entity names must be unique")
        for u in self.users:
            if u.role != USER:
                raise ValueError(f"{u.name} is listed as a user but has role {u.role}")
        for t in self.targets:
            if t.role != TARGET:
                raise ValueError(f"{t.name} is listed as a target but has role {t.role}")

    @property
    def epsilon(self) -> float:
        return self.weights.epsilon

    def rayleigh_distance(self) -> float:
        aperture = self.bs_aperture
        if aperture is None:
            pos = self.tx.element_positions
            aperture = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0))) or self.wave.wavelength
        return rayleigh_distance(aperture, self.wave.wavelength)

    def entity(self, name: str) -> PointEntity:
        for e in (*self.users, *self.targets):
            if e.name == name:
                return e
        raise KeyError(name)

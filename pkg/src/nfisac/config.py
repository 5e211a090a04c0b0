"""YAML scenario files: schema checking, unit conversion, presets.

A scenario file is a single YAML mapping with ``schema_version: 1``.  Powers
are given in dBm and converted to watts here, at the boundary; everything
downstream works in SI units.  Unknown keys are rejected with the offending
key path in the message.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .geometry import (BLOCKAGE_RULES, SPEED_OF_LIGHT, TARGET, USER, PointEntity, Wave, build_upa,
                       los_indicator, upa_aperture)
from .metrics import SensingWeights
from .optimizer import AoConfig
from .scenario import Scenario, dbm_to_watts

SCHEMA_VERSION = 1
PRESETS = ("paper_sec4", "tiny_oracle")


class ConfigError(ValueError):
    """Schema or unit violation in a scenario file."""


# key -> (required, kind); kind is a type tuple, a nested schema dict, or a callable check
_ARRAY = {
    "rows": (True, int), "cols": (True, int), "spacing_m": (True, float),
    "center": (True, "vec3"), "normal": (True, "vec3"), "pattern_exponent": (False, float),
}
_ENTITY = {
    "name": (True, str), "role": (True, str), "position": (True, "vec3"),
    "los": (False, int), "min_rate": (False, float), "noise_dbm": (False, float),
    "rcs": (False, "complex"),
}
_AO = {
    "max_iterations": (False, int), "convergence_tol": (False, float), "solver_tol": (False, float),
    "ris_init": (False, str), "retry_random_init": (False, bool), "feasibility_search": (False, bool),
    "search_iterations": (False, int),
}
_GRID = {
    "y_range": (False, "vec2"), "z_range": (False, "vec2"), "ny": (False, int), "nz": (False, int),
    "x": (False, float),
}
_WEIGHTS = {"gains": (False, "map"), "pairs": (False, "pairs")}
_TOP = {
    "schema_version": (True, int), "name": (False, str),
    "carrier_frequency_hz": (True, float), "wavelength_m": (False, float),
    "arrays": (True, {"tx": (True, _ARRAY), "rx": (True, _ARRAY), "ris": (True, _ARRAY)}),
    "blockage_rule": (False, str), "aperture_convention": (False, str),
    "entities": (True, "entities"),
    "p_max_dbm": (True, float), "sensing_noise_dbm": (True, float), "epsilon": (False, float),
    "weights": (False, _WEIGHTS), "block_length": (False, int),
    "ao": (False, _AO), "grid": (False, _GRID), "method": (False, str), "seed": (False, int),
}


def _check(value, kind, path: str):
    if isinstance(kind, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        for key in value:
            if key not in kind:
                raise ConfigError(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
        for key, (required, sub) in kind.items():
            if key in value:
                _check(value[key], sub, f"{path}.{key}" if path else key)
            elif required:
                raise ConfigError(f"{path}.{key}: missing required key" if path else f"{key}: missing required key")
        return
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number")
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
    elif kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
    elif kind in ("vec3", "vec2"):
        n = int(kind[-1])
        if not (isinstance(value, list) and len(value) == n
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            raise ConfigError(f"{path}: expected a list of {n} numbers")
    elif kind == "complex":
        ok = (isinstance(value, (int, float)) and not isinstance(value, bool)) or (
            isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value))
        if not ok:
            raise ConfigError(f"{path}: expected a number or [re, im]")
    elif kind == "map":
        if not isinstance(value, dict) or not all(isinstance(v, (int, float)) for v in value.values()):
            raise ConfigError(f"{path}: expected a mapping of names to numbers")
    elif kind == "pairs":
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        for i, item in enumerate(value):
            _check(item, {"pair": (True, "names2"), "weight": (True, float)}, f"{path}[{i}]")
    elif kind == "names2":
        if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, str) for v in value)):
            raise ConfigError(f"{path}: expected two entity names")
    elif kind == "entities":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected a non-empty list")
        for i, item in enumerate(value):
            _check(item, _ENTITY, f"{path}[{i}]")
    else:  # pragma: no cover - schema typo
        raise AssertionError(kind)


@dataclass
class ScenarioConfig:
    """Validated raw configuration; :meth:`to_scenario` resolves units and geometry."""

    data: dict

    def __post_init__(self):
        self.data = copy.deepcopy(self.data)
        validate(self.data)

    @property
    def name(self) -> str:
        return self.data.get("name", "scenario")

    @property
    def method(self) -> str:
        return self.data.get("method", "proposed")

    @property
    def seed(self) -> int:
        return self.data.get("seed", 0)

    @property
    def wave(self) -> Wave:
        if "wavelength_m" in self.data:
            return Wave(self.data["wavelength_m"])
        return Wave(SPEED_OF_LIGHT / self.data["carrier_frequency_hz"])

    def to_scenario(self) -> Scenario:
        d = self.data
        rule = d.get("blockage_rule", "none")
        arrays = {}
        for role in ("tx", "rx", "ris"):
            a = d["arrays"][role]
            normal = np.asarray(a["normal"], dtype=float)
            arrays[role] = build_upa(a["rows"], a["cols"], a["spacing_m"], a["center"],
                                     normal / np.linalg.norm(normal), a.get("pattern_exponent", 2.0))
        users, targets = [], []
        for e in d["entities"]:
            alpha = e["los"] if "los" in e else los_indicator(e["position"], rule)
            if e["role"] == USER:
                users.append(PointEntity(e["name"], e["position"], USER, alpha,
                                         noise_power=dbm_to_watts(e["noise_dbm"]), min_rate=e["min_rate"]))
            else:
                rcs = e.get("rcs", 1.0)
                rcs = complex(*rcs) if isinstance(rcs, list) else complex(rcs)
                targets.append(PointEntity(e["name"], e["position"], TARGET, alpha, rcs=rcs))
        w = d.get("weights", {})
        weights = SensingWeights(
            gain_weights=dict(w.get("gains", {})),
            pair_weights={frozenset(p["pair"]): float(p["weight"]) for p in w.get("pairs", [])},
            epsilon=d.get("epsilon", 0.1))
        tx = d["arrays"]["tx"]
        aperture = upa_aperture(tx["rows"], tx["cols"], tx["spacing_m"], d.get("aperture_convention", "full"))
        return Scenario(self.wave, arrays["tx"], arrays["rx"], arrays["ris"], users, targets,
                        p_max=dbm_to_watts(d["p_max_dbm"]), sensing_noise=dbm_to_watts(d["sensing_noise_dbm"]),
                        weights=weights, blockage_rule=rule, block_length=d.get("block_length", 1000),
                        bs_aperture=aperture, name=self.name)

    def ao_config(self) -> AoConfig:
        return AoConfig(seed=self.seed, **self.data.get("ao", {}))

    def grid(self):
        from .simulate import SpatialGrid

        g = dict(self.data.get("grid", {}))
        for key in ("y_range", "z_range"):
            if key in g:
                g[key] = tuple(g[key])
        return SpatialGrid(**g)


def validate(data: dict):
    """Raise :class:`ConfigError` naming the first offending key."""
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping")
    _check(data, _TOP, "")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {data['schema_version']}")
    if data["carrier_frequency_hz"] <= 0:
        raise ConfigError("carrier_frequency_hz: must be positive")
    if data.get("wavelength_m", 1.0) <= 0:
        raise ConfigError("wavelength_m: must be positive")
    for role, a in data["arrays"].items():
        if a["rows"] < 1 or a["cols"] < 1:
            raise ConfigError(f"arrays.{role}: rows and cols must be >= 1")
        if a["spacing_m"] <= 0:
            raise ConfigError(f"arrays.{role}.spacing_m: must be positive")
        if not np.linalg.norm(a["normal"]) > 0:
            raise ConfigError(f"arrays.{role}.normal: must be non-zero")
    if data.get("blockage_rule", "none") not in BLOCKAGE_RULES:
        raise ConfigError(f"blockage_rule: expected one of {sorted(BLOCKAGE_RULES)}")
    if data.get("aperture_convention", "full") not in ("full", "centers"):
        raise ConfigError("aperture_convention: expected 'full' or 'centers'")
    names = set()
    for i, e in enumerate(data["entities"]):
        path = f"entities[{i}]"
        if e["name"] in names:
            raise ConfigError(f"{path}.name: duplicate name {e['name']!r}")
        names.add(e["name"])
        if e["role"] not in (USER, TARGET):
            raise ConfigError(f"{path}.role: expected 'user' or 'target'")
        if e.get("los", 0) not in (0, 1):
            raise ConfigError(f"{path}.los: expected 0 or 1")
        if e["role"] == USER:
            for key in ("min_rate", "noise_dbm"):
                if key not in e:
                    raise ConfigError(f"{path}.{key}: required for users")
            if not e["min_rate"] > 0:
                raise ConfigError(f"{path}.min_rate: must be positive")
            if "rcs" in e:
                raise ConfigError(f"{path}.rcs: only targets carry a cross-section")
        else:
            for key in ("min_rate", "noise_dbm"):
                if key in e:
                    raise ConfigError(f"{path}.{key}: only users carry {key}")
    if data.get("epsilon", 0.1) <= 0:
        raise ConfigError("epsilon: must be positive")
    w = data.get("weights", {})
    for name, v in w.get("gains", {}).items():
        if name not in names:
            raise ConfigError(f"weights.gains.{name}: unknown entity")
        if v <= 0:
            raise ConfigError(f"weights.gains.{name}: must be positive")
    for i, p in enumerate(w.get("pairs", [])):
        if any(n not in names for n in p["pair"]):
            raise ConfigError(f"weights.pairs[{i}].pair: unknown entity")
        if p["weight"] <= 0:
            raise ConfigError(f"weights.pairs[{i}].weight: must be positive")
    if data.get("block_length", 1) < 1:
        raise ConfigError("block_length: must be >= 1")
    ao = data.get("ao", {})
    if ao.get("ris_init", "zeros") not in ("zeros", "random", "matched"):
        raise ConfigError("ao.ris_init: expected zeros, random or matched")
    if data.get("method", "proposed") not in ("proposed", "ffbf", "nccs"):
        raise ConfigError("method: expected proposed, ffbf or nccs")
    for key in ("ny", "nz"):
        if data.get("grid", {}).get(key, 2) < 2:
            raise ConfigError(f"grid.{key}: must be >= 2")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return ScenarioConfig(data)


def load_scenario(path) -> Scenario:
    return load_config(path).to_scenario()


def preset_config(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("nfisac.presets").joinpath(f"{name}.yaml").read_text()
    return ScenarioConfig(yaml.safe_load(text))


def load_preset(name: str) -> Scenario:
    return preset_config(name).to_scenario()


def write_scenario(config: ScenarioConfig, path):
    Path(path).write_text(yaml.safe_dump(config.data, sort_keys=False))

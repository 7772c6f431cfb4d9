"""Scenario configuration: YAML grammar, defaults, validation and the resolved dump.

Grammar (every key below; ``*`` marks required ones)::

    name: str
    geometry:
      lower*: [x, y] or [x, y, z]         # m
      upper*: [x, y] or [x, y, z]
      spacing*: d                         # m
      thickness: 1.0                      # m, 2D only
    horizon:                              # exactly one of
      ratio: m                            # delta = m * d
      absolute: delta                     # m
    material:
      bulk_modulus*, shear_modulus*       # Pa
      solid_density: 2000, water_density: 1000, water_viscosity: 1e-3
      porosity0*: phi0
      permeability*: k_w                  # m^2
      retention: {s1: 0, s2: 0, sa*: Pa, n*: -}
    fracture:                             # exactly one of toughness / mode_I / critical_energy
      toughness: G_c                      # J/m^2
      mode_I: K_I                         # Pa sqrt(m)
      critical_energy: w_cr               # J/m^6
      damage_threshold: 0.5
      enabled: true
    stabilization: {g_stab: 1.0}
    precracks: [[[x0, y0], [x1, y1]], ...]   # segments (2D) or polygons (3D)
    initial: {effective_stress: 0, suction: 0}   # Pa; or pore_pressure instead of suction
    time: {dt*, t_final*, beta1: 0.6, beta2: 0.6, beta3: 1.0}
    solver: {tol: 1e-6, max_iter: 30, max_halvings: 4, linear_solver: direct,
             reuse_tangent: true, storage_floor: 1e-12,
             consistent_start: true}   # start from the quasi-static velocity of the ramp
    boundary:
      bands: [{name, axis, side, thickness | thickness_horizons}]
      displacement: [{tag, component (x|y|z), value: 0, rate: 0}]
      sources: [{tag, rate}]              # kg/(m^3 s), negative extracts water
      gravity: [0, 0]
      reaction: {tag, component}
    output: {directory: output, snapshot_every: 0}
"""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

__all__ = ["ConfigError", "ScenarioConfig", "parse_config", "load_config", "dump_config", "apply_scale"]

AXES = "xyz"

DEFAULTS: dict[str, Any] = {
    "name": "scenario",
    "geometry": {"thickness": 1.0},
    "material": {"solid_density": 2000.0, "water_density": 1000.0, "water_viscosity": 1e-3,
                 "retention": {"s1": 0.0, "s2": 0.0}},
    "fracture": {"damage_threshold": 0.5, "enabled": True},
    "stabilization": {"g_stab": 1.0},
    "precracks": [],
    "initial": {"effective_stress": 0.0},
    "time": {"beta1": 0.6, "beta2": 0.6, "beta3": 1.0},
    "solver": {"tol": 1e-6, "max_iter": 30, "max_halvings": 4, "linear_solver": "direct",
               "reuse_tangent": True, "storage_floor": 1e-12,
               "consistent_start": True},
    "boundary": {"bands": [], "displacement": [], "sources": [], "gravity": None, "reaction": None},
    "output": {"directory": "output", "snapshot_every": 0},
}

REQUIRED = [
    "geometry.lower", "geometry.upper", "geometry.spacing",
    "material.bulk_modulus", "material.shear_modulus", "material.porosity0", "material.permeability",
    "material.retention.sa", "material.retention.n",
    "time.dt", "time.t_final",
]


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot or sign (``1e-3``, ``13.46e9``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass
class ScenarioConfig:
    data: dict
    source: str | None = None
    notes: list[str] = field(default_factory=list)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def dim(self) -> int:
        return len(self.data["geometry"]["lower"])

    @property
    def spacing(self) -> float:
        return float(self.data["geometry"]["spacing"])

    @property
    def horizon(self) -> float:
        h = self.data["horizon"]
        return float(h["absolute"]) if "absolute" in h else float(h["ratio"]) * self.spacing


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _get(data: dict, path: str):
    cur = data
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur or cur[part] is None:
            return None
        cur = cur[part]
    return cur


def _number(problems, data, path, positive=False, nonneg=False, allow_none=False):
    val = _get(data, path)
    if val is None:
        if not allow_none:
            problems.append(f"{path}: required")
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        problems.append(f"{path}: expected a number, got {val!r}")
        return None
    if positive and not val > 0:
        problems.append(f"{path}: must be positive, got {val}")
    if nonneg and not val >= 0:
        problems.append(f"{path}: must be non-negative, got {val}")
    return float(val)


def _validate(data: dict) -> list[str]:
    problems: list[str] = []
    for path in REQUIRED:
        if _get(data, path) is None:
            problems.append(f"{path}: required")
    known = set(DEFAULTS) | {"horizon"}
    for key in data:
        if key not in known:
            problems.append(f"{key}: unknown section")

    lower, upper = _get(data, "geometry.lower"), _get(data, "geometry.upper")
    dim = None
    if lower is not None and upper is not None:
        if not (isinstance(lower, list) and isinstance(upper, list)) or len(lower) != len(upper) \
                or len(lower) not in (2, 3):
            problems.append("geometry.lower/upper: must both be 2- or 3-element lists")
        else:
            dim = len(lower)
            for a in range(dim):
                if not upper[a] > lower[a]:
                    problems.append(f"geometry.upper[{a}]: must exceed geometry.lower[{a}]")
    d = _number(problems, data, "geometry.spacing", positive=True, allow_none=True)
    _number(problems, data, "geometry.thickness", positive=True)
    if d and dim and all(upper[a] > lower[a] for a in range(dim)):
        for a in range(dim):
            cells = (upper[a] - lower[a]) / d
            if abs(cells - round(cells)) > 1e-9 * max(cells, 1.0):
                problems.append(f"geometry: extent along {AXES[a]} is not a multiple of spacing")

    h = data.get("horizon")
    if not isinstance(h, dict) or not ({"ratio", "absolute"} & set(h)):
        problems.append("horizon: give ratio (delta/d) or absolute (delta)")
    else:
        ratio = _number(problems, data, "horizon.ratio", positive=True, allow_none=True)
        absolute = _number(problems, data, "horizon.absolute", positive=True, allow_none=True)
        if ratio is not None and absolute is not None and d:
            if abs(absolute - ratio * d) > 1e-9 * absolute:
                problems.append("horizon: ratio and absolute are both given and inconsistent")
        m = ratio if ratio is not None else (absolute / d if absolute and d else None)
        if m is not None and m < 2:
            problems.append(f"horizon: delta/d must be at least 2, got {m:.4g}")

    for key in ("bulk_modulus", "shear_modulus", "solid_density", "water_density", "water_viscosity",
                "permeability"):
        _number(problems, data, f"material.{key}", positive=True, allow_none=True)
    phi0 = _number(problems, data, "material.porosity0", allow_none=True)
    if phi0 is not None and not 0 < phi0 < 1:
        problems.append("material.porosity0: must lie in (0, 1)")
    n = _number(problems, data, "material.retention.n", allow_none=True)
    if n is not None and not n > 1:
        problems.append("material.retention.n: must exceed 1")
    _number(problems, data, "material.retention.sa", positive=True, allow_none=True)
    for key in ("s1", "s2"):
        v = _number(problems, data, f"material.retention.{key}")
        if v is not None and not 0 <= v < 1:
            problems.append(f"material.retention.{key}: must lie in [0, 1)")

    fr = data.get("fracture") or {}
    routes = [k for k in ("toughness", "mode_I", "critical_energy") if fr.get(k) is not None]
    if fr.get("enabled", True):
        if len(routes) != 1:
            problems.append("fracture: give exactly one of toughness, mode_I, critical_energy")
        for k in routes:
            _number(problems, data, f"fracture.{k}", positive=True)
    thr = _number(problems, data, "fracture.damage_threshold")
    if thr is not None and not 0 < thr <= 1:
        problems.append("fracture.damage_threshold: must lie in (0, 1]")
    _number(problems, data, "stabilization.g_stab", nonneg=True)

    ini = data.get("initial") or {}
    _number(problems, data, "initial.effective_stress")
    if "suction" in ini and "pore_pressure" in ini:
        problems.append("initial: give suction or pore_pressure, not both")
    if "suction" in ini:
        _number(problems, data, "initial.suction", nonneg=True)
    if "pore_pressure" in ini:
        _number(problems, data, "initial.pore_pressure")

    _number(problems, data, "time.dt", positive=True, allow_none=True)
    _number(problems, data, "time.t_final", nonneg=True, allow_none=True)
    b1, b2, b3 = (_number(problems, data, f"time.beta{i}") for i in (1, 2, 3))
    if None not in (b1, b2) and not b1 >= b2 >= 0.5:
        problems.append("time: needs beta1 >= beta2 >= 0.5")
    if b3 is not None and not b3 >= 0.5:
        problems.append("time.beta3: must be at least 0.5")
    tol = _number(problems, data, "solver.tol", positive=True)
    if tol is not None and not tol < 1:
        problems.append("solver.tol: must be below 1")
    if _get(data, "solver.linear_solver") not in ("direct", "iterative"):
        problems.append("solver.linear_solver: must be 'direct' or 'iterative'")
    _number(problems, data, "solver.storage_floor", positive=True)
    for key in ("reuse_tangent", "consistent_start"):
        if not isinstance(_get(data, f"solver.{key}"), bool):
            problems.append(f"solver.{key}: must be true or false")
    for key in ("max_iter", "max_halvings"):
        val = _get(data, f"solver.{key}")
        if isinstance(val, bool) or not isinstance(val, int) or val < (1 if key == "max_iter" else 0):
            problems.append(f"solver.{key}: must be a {'positive' if key == 'max_iter' else 'non-negative'} integer")

    bnd = data.get("boundary") or {}
    tags = set()
    if dim:
        tags = {f"{AXES[a]}{s}" for a in range(dim) for s in ("min", "max")}
    for i, band in enumerate(bnd.get("bands") or []):
        where = f"boundary.bands[{i}]"
        if not isinstance(band, dict) or "name" not in band:
            problems.append(f"{where}: needs a name")
            continue
        tags.add(band["name"])
        if band.get("axis") not in AXES[: dim or 3]:
            problems.append(f"{where}.axis: must be one of {AXES[: dim or 3]}")
        if band.get("side") not in ("min", "max"):
            problems.append(f"{where}.side: must be min or max")
        if band.get("thickness") is None and band.get("thickness_horizons") is None:
            problems.append(f"{where}: needs thickness or thickness_horizons")
    for i, bc in enumerate(bnd.get("displacement") or []):
        where = f"boundary.displacement[{i}]"
        if not isinstance(bc, dict):
            problems.append(f"{where}: must be a mapping")
            continue
        if bc.get("tag") not in tags:
            problems.append(f"{where}.tag: unknown tag {bc.get('tag')!r}")
        if bc.get("component") not in AXES[: dim or 3]:
            problems.append(f"{where}.component: must be one of {AXES[: dim or 3]}")
        for k in ("value", "rate"):
            if k in bc and (isinstance(bc[k], bool) or not isinstance(bc[k], (int, float))):
                problems.append(f"{where}.{k}: expected a number")
    for i, src in enumerate(bnd.get("sources") or []):
        where = f"boundary.sources[{i}]"
        if not isinstance(src, dict) or src.get("tag") not in tags:
            problems.append(f"{where}.tag: unknown tag")
        elif not isinstance(src.get("rate"), (int, float)):
            problems.append(f"{where}.rate: expected a number")
    reac = bnd.get("reaction")
    if reac is not None:
        if reac.get("tag") not in tags:
            problems.append("boundary.reaction.tag: unknown tag")
        if reac.get("component") not in AXES[: dim or 3]:
            problems.append("boundary.reaction.component: invalid")
    g = bnd.get("gravity")
    if g is not None and dim and (not isinstance(g, list) or len(g) != dim):
        problems.append(f"boundary.gravity: must be a {dim}-element list")

    for i, pc in enumerate(data.get("precracks") or []):
        if not isinstance(pc, list) or (dim and any(len(v) != dim for v in pc)):
            problems.append(f"precracks[{i}]: vertices must be {dim}-element lists")
    snap = _get(data, "output.snapshot_every")
    if snap is not None and (not isinstance(snap, int) or snap < 0):
        problems.append("output.snapshot_every: must be a non-negative integer")
    return problems


def parse_config(text: str, source: str | None = None) -> ScenarioConfig:
    """Parse YAML text, apply defaults and validate; raises ConfigError listing every problem."""
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    data = _merge(DEFAULTS, raw)
    problems = _validate(data)
    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(data, source)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, str(path))


def dump_config(config: ScenarioConfig) -> str:
    """Resolved configuration (defaults filled in) as re-loadable YAML."""
    return yaml.safe_dump(config.data, sort_keys=True)


def apply_scale(config: ScenarioConfig, factor: float) -> ScenarioConfig:
    """Coarsen the spacing by ``factor`` (keeping delta/d) and enlarge dt by the same factor."""
    if factor == 1:
        return config
    if not factor > 0:
        raise ConfigError(["--scale must be positive"])
    data = copy.deepcopy(config.data)
    h = data["horizon"]
    ratio = h.get("ratio") or h["absolute"] / data["geometry"]["spacing"]
    data["geometry"]["spacing"] = data["geometry"]["spacing"] * factor
    data["horizon"] = {"ratio": ratio}
    data["time"]["dt"] = data["time"]["dt"] * factor
    for band in data["boundary"]["bands"]:
        if band.get("thickness") is not None and band.get("thickness_horizons") is None:
            band["thickness"] = band["thickness"] * factor
    problems = _validate(data)
    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(data, config.source, config.notes + [f"scaled by {factor}"])

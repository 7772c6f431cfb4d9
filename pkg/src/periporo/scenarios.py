"""Build a simulation from a configuration and run the time loop with output."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .config import AXES, ScenarioConfig, dump_config, load_config, parse_config
from .discretization import apply_precrack, build_neighborhoods, generate_grid, tag_band
from .fracture import FractureParams, critical_energy_density, critical_energy_from_mode_I
from .solid import MaterialParams, RetentionParams
from .solver import (BoundaryConditions, DisplacementBC, FluidSourceBC, Simulation, StepRejected,
                     TimeIntegration)

log = logging.getLogger(__name__)

__all__ = ["RunOutputs", "build_simulation", "run_scenario", "preset_path", "load_preset", "PRESETS"]

PRESETS = ("example1", "example2", "example3", "example4")


def preset_path(name: str) -> Path:
    return Path(str(resources.files("periporo") / "presets" / f"{name}.yaml"))


def load_preset(name: str) -> ScenarioConfig:
    return load_config(preset_path(name))


@dataclass
class RunOutputs:
    rows: list[dict] = field(default_factory=list)
    snapshots: list[Path] = field(default_factory=list)
    simulation: Simulation | None = None
    failed: StepRejected | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])


def build_simulation(config: ScenarioConfig) -> Simulation:
    c = config.data
    geo = c["geometry"]
    cloud = generate_grid(geo["lower"], geo["upper"], geo["spacing"], geo["thickness"])
    delta = config.horizon
    for band in c["boundary"]["bands"]:
        thick = band.get("thickness")
        if band.get("thickness_horizons") is not None:
            thick = band["thickness_horizons"] * delta
        tag_band(cloud, band["name"], band["axis"], band["side"], thick, fictitious=band.get("fictitious", False))
    hood = build_neighborhoods(cloud, delta)
    for crack in c["precracks"]:
        apply_precrack(hood, np.asarray(crack, dtype=float))

    m = c["material"]
    ret = RetentionParams(**{k: float(m["retention"][k]) for k in ("s1", "s2", "sa", "n")})
    mat = MaterialParams(
        bulk_modulus=m["bulk_modulus"], shear_modulus=m["shear_modulus"], solid_density=m["solid_density"],
        water_density=m["water_density"], water_viscosity=m["water_viscosity"], porosity0=m["porosity0"],
        permeability=m["permeability"], retention=ret)

    fr = c["fracture"]
    dim, t = cloud.dim, cloud.thickness
    if not fr.get("enabled", True):
        wcr = np.inf
    elif fr.get("critical_energy") is not None:
        wcr = float(fr["critical_energy"])
    elif fr.get("toughness") is not None:
        wcr = critical_energy_density(delta, fr["toughness"], dim, t)
    else:
        wcr = critical_energy_from_mode_I(delta, fr["mode_I"], mat.youngs_modulus, mat.poisson_ratio, dim, t)
    fparams = FractureParams(critical_energy=wcr, damage_threshold=fr["damage_threshold"])

    tm, so = c["time"], c["solver"]
    ti = TimeIntegration(dt=tm["dt"], t_final=tm["t_final"], beta1=tm["beta1"], beta2=tm["beta2"],
                         beta3=tm["beta3"], tol=so["tol"], max_iter=so["max_iter"],
                         max_halvings=so["max_halvings"], linear_solver=so["linear_solver"],
                         reuse_tangent=so["reuse_tangent"], storage_floor=so["storage_floor"],
                         consistent_start=bool(so["consistent_start"]))

    b = c["boundary"]
    disp = [DisplacementBC(bc["tag"], AXES.index(bc["component"]), float(bc.get("rate", 0.0)),
                           float(bc.get("value", 0.0))) for bc in b["displacement"]]
    srcs = [FluidSourceBC(s["tag"], float(s["rate"])) for s in b["sources"]]
    reac = b.get("reaction")
    bcs = BoundaryConditions(disp, srcs, b.get("gravity"),
                             reac["tag"] if reac else None, AXES.index(reac["component"]) if reac else None)

    ini = c["initial"]
    p0 = -float(ini["suction"]) if "suction" in ini else float(ini.get("pore_pressure", 0.0))
    return Simulation(hood, mat, fparams, ti, bcs, g_stab=c["stabilization"]["g_stab"],
                      initial_stress=float(ini["effective_stress"]), initial_pressure=p0)


def _row(sim: Simulation) -> dict:
    s = sim.state
    return {
        "t": s.t,
        "applied_disp": sim.applied_displacement(s.t),
        "reaction_force": s.reaction,
        "dissipated_energy": sim.total_dissipated(),
        "max_damage": float(s.damage.max()),
        "min_pw": float(s.p.min()),
        "max_pw": float(s.p.max()),
        "n_fracture_points": int(s.is_fracture.sum()),
    }


def run_scenario(config: ScenarioConfig, out_dir: str | Path | None = None, snapshot_every: int | None = None,
                 max_steps: int | None = None, on_step=None) -> RunOutputs:
    """Run the full time loop; returns rows, snapshot paths and the final simulation.

    Stops early (recording ``failed``) when a step is rejected after all halvings.
    """
    sim = build_simulation(config)
    out = RunOutputs(simulation=sim)
    every = config["output"]["snapshot_every"] if snapshot_every is None else snapshot_every
    dt = sim.ti.dt
    n_steps = int(round(sim.ti.t_final / dt))
    if max_steps is not None:
        n_steps = min(n_steps, max_steps)
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "resolved_config.yaml").write_text(dump_config(config))

    def snapshot():
        if out_path is not None:
            f = io.write_snapshot(out_path / f"snapshot_{sim.state.step:06d}.vtk", sim.cloud.positions,
                                  io.snapshot_fields(sim), title=f"{config['name']} t={sim.state.t!r}")
            out.snapshots.append(f)

    if every:
        snapshot()
    for k in range(n_steps):
        try:
            sim.advance(dt)
        except StepRejected as exc:
            log.error("run stopped at step %d: %s; history: %s", exc.step, exc, exc.history)
            out.failed = exc
            break
        out.rows.append(_row(sim))
        if on_step is not None:
            on_step(sim)
        if every and sim.state.step % every == 0:
            snapshot()
    if out_path is not None:
        if not out.snapshots or out.snapshots[-1].name != f"snapshot_{sim.state.step:06d}.vtk":
            snapshot()
        io.write_timeseries(out.rows, out_path / "timeseries.csv")
    return out


def config_from_text(text: str) -> ScenarioConfig:
    return parse_config(text)

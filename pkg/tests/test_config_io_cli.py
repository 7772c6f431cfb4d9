import csv

import numpy as np
import pytest

from periporo import cli, io
from periporo.config import ConfigError, REQUIRED, apply_scale, dump_config, load_config, parse_config
from periporo.scenarios import PRESETS, build_simulation, load_preset, run_scenario

SMALL = """
name: tiny
geometry: {lower: [0, 0], upper: [8e-3, 8e-3], spacing: 1e-3}
horizon: {ratio: 3.05}
material:
  bulk_modulus: 7e8
  shear_modulus: 1.5e8
  porosity0: 0.33
  permeability: 1e-15
  retention: {sa: 5e5, n: 1.5}
fracture: {toughness: 5.0}
initial: {effective_stress: 0.0, suction: 5e4}
time: {dt: 1.0, t_final: 3.0}
boundary:
  displacement:
    - {tag: ymin, component: x}
    - {tag: ymin, component: y}
    - {tag: ymax, component: y, rate: RATE}
output: {directory: out, snapshot_every: 1}
"""


def small(rate=1e-7) -> str:
    return SMALL.replace("RATE", repr(rate))


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_config_lists_every_required_field():
    with pytest.raises(ConfigError) as info:
        parse_config("")
    msg = "\n".join(info.value.problems)
    for path in REQUIRED:
        assert path in msg
    assert "horizon" in msg


def test_inconsistent_horizon_rejected():
    text = small().replace("horizon: {ratio: 3.05}", "horizon: {ratio: 3.05, absolute: 4e-3}")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert any("horizon" in p for p in info.value.problems)


def test_exponent_floats_parse_as_numbers():
    cfg = parse_config(small())
    assert isinstance(cfg["material"]["bulk_modulus"], float)
    assert cfg.horizon == pytest.approx(3.05e-3)


def test_presets_load_and_validate():
    for name in PRESETS:
        cfg = load_preset(name)
        assert cfg["name"] == name


def test_scale_keeps_ratio_and_coarsens_dt():
    cfg = parse_config(small())
    s = apply_scale(cfg, 2.0)
    assert s.spacing == pytest.approx(2e-3) and s["time"]["dt"] == pytest.approx(2.0)
    assert s.horizon / s.spacing == pytest.approx(3.05)
    with pytest.raises(ConfigError):
        apply_scale(cfg, -1.0)


def test_snapshot_round_trip_single_point(tmp_path):
    pos = np.array([[0.1, 0.2]])
    fields = {"displacement": np.array([[1e-7, -3.3e-9]])}
    for k, name in enumerate(io.SCALAR_FIELDS):
        fields[name] = np.array([np.pi * (k + 1) * 1e-3])
    f = io.write_snapshot(tmp_path / "one.vtk", pos, fields)
    back_pos, back = io.read_snapshot(f)
    assert len(back) == 8
    assert np.array_equal(back_pos, [[0.1, 0.2, 0.0]])
    assert np.array_equal(back["displacement"], [[1e-7, -3.3e-9, 0.0]])
    for name in io.SCALAR_FIELDS:
        assert np.array_equal(back[name], fields[name])


def test_snapshot_rejects_missing_or_misshaped_fields(tmp_path):
    with pytest.raises(ValueError):
        io.write_snapshot(tmp_path / "x.vtk", np.zeros((2, 2)), {"displacement": np.zeros((2, 2))})
    fields = {"displacement": np.zeros((2, 2)), **{k: np.zeros(3) for k in io.SCALAR_FIELDS}}
    with pytest.raises(ValueError):
        io.write_snapshot(tmp_path / "x.vtk", np.zeros((2, 2)), fields)


def test_header_only_timeseries(tmp_path):
    f = io.write_timeseries([], tmp_path / "ts.csv")
    rows = list(csv.reader(f.open()))
    assert rows == [list(io.TIMESERIES_HEADER)]


def test_cli_success_writes_outputs(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    cfg = write(tmp_path, small())
    out = tmp_path / "run"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "timeseries.csv").open()))
    assert len(rows) == 3
    assert float(rows[-1]["t"]) == pytest.approx(3.0)
    snaps = sorted(out.glob("snapshot_*.vtk"))
    assert len(snaps) == 4
    _, fields = io.read_snapshot(snaps[-1])
    assert set(fields) == set(io.FIELD_NAMES)


def test_cli_configuration_errors_exit_2(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == 2
    bad = write(tmp_path, "geometry: {lower: [0, 0]}\n")
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "material.bulk_modulus" in err and "time.dt" in err
    assert cli.main(["run", str(write(tmp_path, small(), "ok.yaml")), "--scale", "0"]) == 2


def test_cli_solver_failure_exits_3(tmp_path, capsys):
    # crushing the patch to a fraction of its height inverts neighbourhoods at every halving
    text = small(-6e-3).replace("output:", "solver: {max_halvings: 1}\noutput:")
    cfg = write(tmp_path, text)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "halvings" in capsys.readouterr().err


def test_env_var_overrides_output_directory_only(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(target))
    cfg = write(tmp_path, small())
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "ignored"), "--snapshot-every", "0"]) == 0
    assert (target / "timeseries.csv").exists()
    assert not (tmp_path / "ignored").exists()
    # the rest of the run is unchanged by the variable
    rows = list(csv.DictReader((target / "timeseries.csv").open()))
    assert len(rows) == 3


def test_resolved_dump_reproduces_run(tmp_path):
    cfg = parse_config(small())
    a = run_scenario(cfg, tmp_path / "a")
    resolved = load_config(tmp_path / "a" / "resolved_config.yaml")
    assert dump_config(resolved) == dump_config(cfg)
    b = run_scenario(resolved, tmp_path / "b")
    assert (tmp_path / "a" / "timeseries.csv").read_text() == (tmp_path / "b" / "timeseries.csv").read_text()
    assert np.array_equal(a.simulation.state.p, b.simulation.state.p)


def test_zero_load_run_is_identity(tmp_path):
    text = small(0.0).replace("suction: 5e4", "suction: 0.0")
    res = run_scenario(parse_config(text), tmp_path / "z")
    s = res.simulation.state
    assert np.all(s.u == 0) and np.all(s.p == 0) and np.all(s.damage == 0)
    assert res.column("reaction_force").tolist() == [0.0] * 3


def test_build_simulation_derives_critical_energy():
    cfg = parse_config(small())
    sim = build_simulation(cfg)
    # [DERIVED] 2D: 3 G_c / (2 t delta^3)
    assert sim.frac.critical_energy == pytest.approx(3 * 5.0 / (2 * 3.05e-3**3), rel=1e-12)
    assert np.all(sim.state.p == -5e4)


def test_example1_smoke(tmp_path):
    cfg = apply_scale(load_preset("example1"), 4.0)
    res = run_scenario(cfg, None, max_steps=10)
    assert res.failed is None and len(res.rows) == 10
    R = res.column("reaction_force")
    assert np.all(np.isfinite(R)) and R[-1] > R[0] > 0

"""Mode I crack growth in an unsaturated clay plate pulled apart at the top and bottom.

The preset holds a 0.25 m x 0.5 m plate with a 0.1 m edge notch at mid-height.
Both ends are pulled at a constant rate; the reaction climbs until bonds at the
notch tip break near t = 2300 s, then falls as the crack runs across the plate.
Suction grows around the opening crack.

The default --scale 4 (800 points) finishes in about a minute; --scale 2
(5000 points) takes about half an hour.

Run:  python demos/01_example1_mode_I.py [--scale 4] [--t-final 3400]
"""
import argparse

import numpy as np

from periporo.config import apply_scale
from periporo.scenarios import load_preset, run_scenario

ap = argparse.ArgumentParser()
ap.add_argument("--scale", type=float, default=4.0)
ap.add_argument("--t-final", type=float, default=3400.0)
args = ap.parse_args()

cfg = apply_scale(load_preset("example1"), args.scale)
cfg.data["time"]["dt"] = 4.0 * args.scale   # propagation speed depends on dt; keep it tied to d
cfg.data["time"]["t_final"] = args.t_final
tip0, mid = 0.1, 0.25


def report(sim):
    s, x = sim.state, sim.cloud.positions
    if s.step % 10:
        return
    crack = (s.damage >= 0.3) & (x[:, 0] > tip0)
    tip = x[crack, 0].max() if crack.any() else tip0
    p_crack = f"{s.p[crack].mean() / 1e3:8.1f}" if crack.any() else "     n/a"
    print(f"t {s.t:6.0f} s  R {s.reaction:10.4g} N/m  tip x {tip * 1e3:6.1f} mm  "
          f"p at crack {p_crack} kPa  mean p {s.p.mean() / 1e3:8.1f} kPa  "
          f"dissipated {sim.total_dissipated():7.3f} J/m")


print(f"{cfg['name']}: d = {cfg.spacing * 1e3:.2f} mm, delta = {cfg.horizon * 1e3:.2f} mm")
out = run_scenario(cfg, on_step=report)
R = out.column("reaction_force")
t = out.column("t")
k = int(np.argmax(R))
print(f"peak reaction {R[k]:.4g} N/m at t = {t[k]:.0f} s; final {R[-1]:.4g} N/m")
if out.failed:
    print("stopped early:", out.failed)

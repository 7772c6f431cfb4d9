"""Mode II: a notched block sheared along its top edge.

The top edge moves towards -x while the bottom is clamped.  Before the crack
starts, the pore water above the notch goes into suction and the water below it
is compressed.  The new crack kinks upward from the notch tip.  The script
prints the pressure on either side of the notch and then a coarse damage map.

--scale 4 (d = 2 mm, 1200 points) runs in a few minutes.

Run:  python demos/02_example2_mode_II.py [--scale 4] [--ratio 3.05]
"""
import argparse

import numpy as np

from periporo.config import apply_scale
from periporo.scenarios import load_preset, run_scenario

ap = argparse.ArgumentParser()
ap.add_argument("--scale", type=float, default=4.0)
ap.add_argument("--ratio", type=float, default=3.05, help="horizon / spacing")
ap.add_argument("--t-final", type=float, default=84.0)
args = ap.parse_args()

cfg = apply_scale(load_preset("example2"), args.scale)
cfg.data["horizon"] = {"ratio": args.ratio}
cfg.data["time"]["dt"], cfg.data["time"]["t_final"] = 1.0, args.t_final
tip = np.array([0.04, 0.03])


def report(sim):
    s, x = sim.state, sim.cloud.positions
    if s.step % 6:
        return
    behind = x[:, 0] < tip[0]
    band = np.abs(x[:, 1] - tip[1]) < sim.hood.horizon
    above = behind & band & (x[:, 1] > tip[1])
    below = behind & band & (x[:, 1] < tip[1])
    print(f"t {s.t:5.0f} s  R {s.reaction:10.4g} N/m  p above notch {s.p[above].mean() / 1e3:8.1f} kPa  "
          f"below {s.p[below].mean() / 1e3:8.1f} kPa  damaged points {(s.damage >= 0.3).sum()}")


out = run_scenario(cfg, on_step=report)
sim = out.simulation
x, d = sim.cloud.positions, sim.cloud.spacing
ix = np.round(x[:, 0] / d - 0.5).astype(int)
iy = np.round(x[:, 1] / d - 0.5).astype(int)
grid = np.full((iy.max() + 1, ix.max() + 1), ".")
grid[iy, ix] = np.where(sim.state.damage >= 0.3, "#", ".")
print("damage >= 0.3 (top of the block first):")
for row in grid[::-1]:
    print("".join(row))
if out.failed:
    print("stopped early:", out.failed)

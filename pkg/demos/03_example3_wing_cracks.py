"""Wing cracks from an inclined notch in a sheared unsaturated clay square.

The top face moves along +x and the right face along +y, while the bottom and
left faces are held tangentially.  Near u = 1.2e-2 mm, new cracks leave both
ends of the 30 degree notch and turn toward the 45 degree diagonal.  Suction
rises slightly along them.

Pass --suction to repeat the run at another initial suction.  The initial
effective stress is set to -S_r * s, so the total stress starts at zero.

--scale 2 (d = 2 mm, 4900 points) with dt = 10 s takes a few minutes.

Run:  python demos/03_example3_wing_cracks.py [--scale 2] [--suction 50e3]
"""
import argparse

import numpy as np

from periporo import fluid
from periporo.config import apply_scale
from periporo.scenarios import load_preset, run_scenario
from periporo.solid import RetentionParams

ap = argparse.ArgumentParser()
ap.add_argument("--scale", type=float, default=2.0)
ap.add_argument("--suction", type=float, default=50e3, help="initial suction, Pa")
ap.add_argument("--t-final", type=float, default=900.0)
args = ap.parse_args()

cfg = apply_scale(load_preset("example3"), args.scale)
ret = cfg["material"]["retention"]
S, _ = fluid.retention_saturation(-args.suction, RetentionParams(**ret))
cfg.data["initial"] = {"suction": args.suction, "effective_stress": -S * args.suction}
cfg.data["time"]["dt"], cfg.data["time"]["t_final"] = 5.0 * args.scale, args.t_final
a, b = np.array([0.06134, 0.065]), np.array([0.07866, 0.075])
axis = (b - a) / np.linalg.norm(b - a)
base = {}


def report(sim):
    s, x = sim.state, sim.cloud.positions
    band = s.damage >= 0.3
    base.setdefault("band", band)
    if s.step % 5:
        return
    new = band & ~base["band"]
    wings = []
    for tip, side in ((a, -1.0), (b, 1.0)):
        rel = x[new] - tip
        rel = rel[side * (rel @ axis) > 0]
        if len(rel):
            j = np.argmax(np.linalg.norm(rel, axis=1))
            wings.append(f"{np.linalg.norm(rel[j]) * 1e3:4.0f} mm @ {np.degrees(np.arctan2(rel[j, 1], rel[j, 0])) % 180:3.0f} deg")
        else:
            wings.append("   none      ")
    print(f"t {s.t:5.0f} s  u {1.41e-8 * s.t * 1e3:.4f} mm  R {s.reaction:8.1f} N/m  wings {wings[0]} | {wings[1]}  "
          f"suction at wings {f'{-s.p[new].mean() / 1e3:9.3f}' if new.any() else '      n/a'} kPa")


print(f"initial suction {args.suction / 1e3:.0f} kPa, S_r {S:.4f}, effective stress {-S * args.suction / 1e3:.1f} kPa")
out = run_scenario(cfg, on_step=report)
if out.failed:
    print("stopped early:", out.failed)

"""Run the packaged Dubins benchmark and draw its x-y projection.

Writes the usual CLI artifacts plus ``dubins_xy.png`` to the output directory
(default ``demo-out``).  Plotting needs matplotlib; without it only the CSV
files are written.

Run: python3 demos/dubins_projection.py [OUT_DIR]
"""

import csv
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from clrt.cli import benchmark_config_path, run_benchmark
from clrt.systems import builtin

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
report = run_benchmark(benchmark_config_path("dubins"), out, plot=(0, 1), stride=20)
print(f"status={report.status} segments={len(report.segments)} "
      f"TV={report.total_volume:.4g} time={report.wall_time:.1f}s")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("matplotlib not installed; plot data is in", out / "plot.csv")
    raise SystemExit(0)

curves = defaultdict(list)
with open(out / "plot.csv") as fh:
    for row in csv.DictReader(fh):
        curves[int(row["segment_idx"])].append((float(row["u"]), float(row["v"])))

# a few reference trajectories from the initial ball
sys_ = builtin("dubins")
rng = np.random.default_rng(0)
fig, ax = plt.subplots(figsize=(6, 6))
for pts in curves.values():
    pts = np.array(pts)
    ax.plot(pts[:, 0], pts[:, 1], color="tab:blue", lw=0.8)
for _ in range(10):
    d = rng.normal(size=3)
    x0 = np.array([0.0, 0.0, 0.7854]) + 0.01 * rng.random() * d / np.linalg.norm(d)
    sol = solve_ivp(lambda t, x: sys_.f(t, x), (0, 10), x0, rtol=1e-10, atol=1e-12,
                    dense_output=True)
    ts = np.linspace(0, 10, 1000)
    xs = sol.sol(ts)
    ax.plot(xs[0], xs[1], color="tab:red", lw=0.4)
ax.set_xlabel("x")
ax.set_ylabel("y")
ax.set_aspect("equal")
ax.set_title("Dubins car: every 20th tube segment (blue), sample trajectories (red)")
fig.savefig(out / "dubins_xy.png", dpi=150, bbox_inches="tight")
print("wrote", out / "dubins_xy.png")

"""Brusselator reachtube through the library API: radii, volume and FTLE bound.

Run: python3 demos/brusselator_ftle.py
"""

import json
import math

from clrt.algorithm import ftle_bound, run
from clrt.cli import benchmark_config_path, load_config, segment_volume

raw = json.loads(benchmark_config_path("brusselator").read_text())
system, cfg, _ = load_config(raw)


count = [0]


def report(seg):
    count[0] += 1
    if count[0] % 50 == 1:
        print(f"t={seg.t_lo:5.2f}  h={seg.h:.3g}  delta={seg.delta_small:.3e}  "
              f"Delta={seg.delta_big:.3e}  lambda={seg.lam:.5f}  switched={seg.switched}")


tube = run(system, cfg, progress=report)
total = math.fsum(segment_volume(s) for s in tube)
log_lam = math.fsum(math.log(s.lam) for s in tube)
print(f"complete={tube.complete} segments={len(tube)} total volume={total:.4g}")
print(f"FTLE upper bound over [0, {cfg.T}]: {ftle_bound(math.exp(log_lam), cfg.T - cfg.t0):.4f}")

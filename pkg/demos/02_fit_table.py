"""Fit a synthetic four-legged table and check that the legs share one shape.

Run with a smaller schedule for a quick look:  python 02_fit_table.py 100 300
"""
import sys
from pathlib import Path

import numpy as np

from simparts import FitConfig, SynthSpec, fit, freeze_assignment, generate, preset, truth_loss
from simparts.io import write_points
from simparts.metrics import part_point_stats, self_similarity
from simparts.model import assemble

stage1, stage2 = (int(a) for a in sys.argv[1:3]) if len(sys.argv) > 2 else (200, 800)

# %% ground truth: one top shape, one leg shape used four times
X, labels, truth = generate(SynthSpec("Table4Leg", noise_sigma=0.01, seed=0))
weights = preset("table")
print(f"{len(X)} points; truth L_p = {truth_loss(X, truth, weights).per_term['p']:.2e}")

# %% fit 2 shapes to 5 parts, 5 restarts
res = fit(X, 2, 5, FitConfig(weights=weights, stage1_iters=stage1, stage2_iters=stage2))
model = res.model
hot = freeze_assignment(model).hot
print(f"fitted in {res.seconds:.0f}s; restart finals {np.round(res.finals, 4)}")
print("shape used by each part:", hot.tolist())
for i in range(model.M_s):
    p = model.primitive(i)
    print(f"shape {i}: alpha {p.alpha.round(3)}, eps {p.eps.round(2)}, taper {p.taper.round(2)}")

# %% parts that share a shape have identical canonical point sets
mean_cd, min_cd = self_similarity(model)
print(f"self-similarity: mean CD {mean_cd:.3e}, min CD {min_cd:.3e}")
stats = part_point_stats(X, model)
print(f"points per part {stats.counts.tolist()}, SDev {stats.sdev:.1f}")

# %% export for a point-cloud viewer
out = Path(__file__).with_name("table_fit.ply")
asm = assemble(model)
write_points(out, asm.Y, asm.part_of)
print("wrote", out)

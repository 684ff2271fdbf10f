"""Cut one table leg and fill it back in by copying points from the other legs."""
import numpy as np

from simparts import Corruption, FitConfig, SynthSpec, completion_s, fit, generate, preset
from simparts.losses import chamfer
from simparts.model import assemble

X, labels, _ = generate(SynthSpec("Table4Leg", seed=0))
cfg = FitConfig(weights=preset("table"), seed=0)

# %% the two corruptions on a leg (part 1)
for kind, K in (("cut", 200), ("hole", 50)):
    X_inc, _, removed = Corruption(kind, 1, K, seed=0).apply(X, labels)
    lost = X[removed]
    print(f"{kind:4s} K={K}: removed points span {np.ptp(lost, axis=0).round(3)}")

# %% completion by similarity vs. by reconstruction, for growing cuts
print(" K    uncompleted   completion-S   completion-R")
for K in (100, 200, 400):
    X_inc, _, _ = Corruption("cut", 1, K, seed=0).apply(X, labels)
    model = fit(X_inc, 2, 5, cfg).model
    S = completion_s(X_inc, model)
    R = assemble(model).Y
    print(f"{K:3d}   {chamfer(X_inc, X):.3e}     {chamfer(S, X):.3e}      {chamfer(R, X):.3e}")

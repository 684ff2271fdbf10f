"""Set-level metrics on small collections of clouds."""
import numpy as np

from simparts import SynthSpec, generate
from simparts.metrics import cov, distance_table, jsd, mmd

rng = np.random.default_rng(0)


def sample(template, seed, n=256):
    X, _, _ = generate(SynthSpec(template, 0.005, points_per_part=128, seed=seed))
    X = X[rng.choice(len(X), n, replace=False)]
    return X / (2 * np.abs(X).max())          # fit the unit cube used by the JSD grid


tables = [sample("Table4Leg", s) for s in range(4)]
chairs = [sample("ChairArms", s) for s in range(4)]

# %% a set against itself, and against a set of different objects
for name, other in (("tables vs tables", [sample("Table4Leg", s + 10) for s in range(4)]),
                    ("tables vs chairs", chairs)):
    D = distance_table(tables, other, "cd")
    print(f"{name}: JSD {jsd(tables, other):.3f}  MMD-CD {mmd(tables, other, table=D):.2e}  "
          f"COV-CD {cov(tables, other, table=D):.2f}")

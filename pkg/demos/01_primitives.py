"""Superquadric primitives, poses and the distances the losses are built on."""
import numpy as np

from simparts import Pose, Superquadric
from simparts.geometry import sq_implicit, sq_radial_distance, sq_sample_surface_uniform

rng = np.random.default_rng(0)

# %% a family of shapes: box-like, ellipsoid, octahedron-like, tapered
shapes = {
    "box": Superquadric([0.5, 0.3, 0.2], [0.2, 0.2]),
    "ellipsoid": Superquadric([0.5, 0.3, 0.2], [1.0, 1.0]),
    "octahedron": Superquadric([0.5, 0.3, 0.2], [1.9, 1.9]),
    "tapered": Superquadric([0.5, 0.3, 0.2], [0.5, 0.5], [0.6, 0.0]),
}
for name, p in shapes.items():
    S = sq_sample_surface_uniform(p, 2000, rng)
    F = sq_implicit(p, S)
    print(f"{name:10s} extent {np.ptp(S, axis=0).round(3)}  max |F-1| on samples {np.abs(F - 1).max():.1e}")

# %% inside / outside and the radial distance to the surface
p = shapes["ellipsoid"]
for x in ([0.0, 0.0, 0.0], [0.25, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]):
    print(f"x = {x}: F = {sq_implicit(p, x):7.3f}, radial distance = {sq_radial_distance(p, x):.3f}")

# %% a pose places the canonical shape in the object frame
T = Pose(q=[np.cos(np.pi / 8), 0, 0, np.sin(np.pi / 8)], t=[1.0, 0.0, 0.5])   # 45 deg about z
u = sq_sample_surface_uniform(p, 5, rng)
x = T.apply(u)
print("round trip error:", np.abs(T.inverse_apply(x) - u).max())

"""Synthetic part corruptions (Cut, Hole) and shape completion by
reconstruction or by copying points across parts that share a shape."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial import cKDTree

from .fit import FitConfig, fit
from .model import PartsModel, assemble, freeze_assignment
from .losses import partition_by_primitive


def _part_order(X, labels, part, K, rng):
    """Indices of the target part sorted by a random positive direction, descending."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise ValueError(f"{len(labels)} labels for {len(X)} points")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    idx = np.flatnonzero(labels == part)
    if K >= len(idx):
        raise ValueError(f"cannot remove {K} points from part {part} with {len(idx)} points")
    w = rng.uniform(0.0, 1.0, 3)
    order = np.argsort(-(X[idx] @ w), kind="stable")
    return X, idx[order]


def corrupt_cut(X, labels, part: int, K: int, rng: np.random.Generator):
    """Remove the K target-part points furthest along a random direction in [0,1]^3.

    Returns (X_inc, removed) with ``removed`` sorted indices into X.
    """
    X, ranked = _part_order(X, labels, part, K, rng)
    removed = np.sort(ranked[:K])
    return np.delete(X, removed, axis=0), removed


def corrupt_hole(X, labels, part: int, K: int, rng: np.random.Generator):
    """Remove a K-point ball from the target part, centred at its K-th ranked point."""
    X, ranked = _part_order(X, labels, part, K, rng)
    if len(ranked) <= 2 * K:
        raise ValueError(f"part {part} has {len(ranked)} points; a hole of {K} needs more than {2 * K}")
    centre = X[ranked[K - 1]]
    _, nn = cKDTree(X[ranked]).query(centre, k=K)
    removed = np.sort(ranked[np.atleast_1d(nn)])
    return np.delete(X, removed, axis=0), removed


@dataclass(frozen=True)
class Corruption:
    kind: Literal["cut", "hole"]
    part: int
    K: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("cut", "hole"):
            raise ValueError(f"unknown corruption {self.kind!r}; use 'cut' or 'hole'")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    def apply(self, X, labels):
        """(X_inc, labels_inc, removed); the same seed gives the same direction for every K."""
        f = corrupt_cut if self.kind == "cut" else corrupt_hole
        X_inc, removed = f(X, labels, self.part, self.K, np.random.default_rng(self.seed))
        return X_inc, np.delete(np.asarray(labels), removed), removed


def completion_r(X_inc, M_s: int, M_T: int, config: FitConfig | None = None) -> np.ndarray:
    """Fit the incomplete cloud and return the model's full reconstruction."""
    X_inc = np.asarray(X_inc, dtype=float)
    if len(X_inc) == 0:
        raise ValueError("cannot complete an empty cloud")
    return assemble(fit(X_inc, M_s, M_T, config).model).Y


def completion_s(X_inc, model: PartsModel, return_sources: bool = False):
    """Copy every point into each other part that uses the same shape.

    A point of part m goes to part m' through the canonical frame:
    x -> R_m' R_m^T (x - t_m) + t_m'.  The output starts with X_inc unchanged.
    With ``return_sources`` also returns, per output point, the index of the
    source point and the part it was copied into (-1 for originals).
    """
    X_inc = np.asarray(X_inc, dtype=float).reshape(-1, 3)
    hot = freeze_assignment(model).hot
    prims = [(model.primitive(i), model.pose(m)) for m, i in enumerate(hot)]
    groups = partition_by_primitive(X_inc, prims)
    R, t = model.rotations, model.trans
    out, src, dst = [X_inc], [np.arange(len(X_inc))], [np.full(len(X_inc), -1)]
    for m, idx in enumerate(groups):
        if len(idx) == 0:
            continue
        u = (X_inc[idx] - t[m]) @ R[m]          # canonical coordinates
        for m2 in np.flatnonzero(hot == hot[m]):
            if m2 == m:
                continue
            out.append(u @ R[m2].T + t[m2])
            src.append(idx)
            dst.append(np.full(len(idx), m2))
    Y = np.concatenate(out)
    if return_sources:
        return Y, np.concatenate(src), np.concatenate(dst)
    return Y

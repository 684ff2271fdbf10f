"""Point-cloud and set-level evaluation metrics, self-similarity scores and
per-part point statistics."""
from __future__ import annotations

import logging
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .losses import _Parts, chamfer, partition_labels
from .model import PartsModel, assemble, freeze_assignment, part_canonical_points

log = logging.getLogger(__name__)

EMD_MAX_POINTS = 512


def emd(X, Y) -> float:
    """Exact earth mover distance between equal-size clouds (mean matched length)."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    Y = np.asarray(Y, dtype=float).reshape(-1, 3)
    if len(X) != len(Y):
        raise ValueError(f"EMD needs equal-size clouds, got {len(X)} and {len(Y)}")
    if len(X) > EMD_MAX_POINTS:
        raise ValueError(f"EMD is exact only up to {EMD_MAX_POINTS} points, got {len(X)}")
    C = cdist(X, Y)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].sum() / len(X))


DISTANCES: dict[str, Callable] = {"cd": chamfer, "emd": emd}


def _distance(d):
    if callable(d):
        return d
    try:
        return DISTANCES[d.lower()]
    except KeyError:
        raise ValueError(f"unknown distance {d!r}; use 'cd' or 'emd'") from None


def distance_table(X_set, Y_set, d="cd") -> np.ndarray:
    """(len(X_set), len(Y_set)) table of pairwise cloud distances."""
    f = _distance(d)
    if len(X_set) == 0 or len(Y_set) == 0:
        raise ValueError("both cloud sets must be non-empty")
    return np.array([[f(x, y) for y in Y_set] for x in X_set])


def mmd(X_set, Y_set, d="cd", table=None) -> float:
    """Mean over reference clouds X_j of the distance to the closest Y_i."""
    D = distance_table(X_set, Y_set, d) if table is None else table
    return float(D.min(axis=1).mean())


def cov(X_set, Y_set, d="cd", table=None) -> float:
    """Fraction of reference clouds that are the nearest one for some Y_i."""
    D = distance_table(X_set, Y_set, d) if table is None else table
    matched = np.unique(np.argmin(D, axis=0))
    return len(matched) / D.shape[0]


def voxel_histogram(clouds, grid_res: int = 28, bounds=(-0.5, 0.5)):
    """Counts of all points of all clouds on a grid_res^3 grid over a cube.

    Points outside the cube are clamped into the boundary voxels; the number
    of such points is returned alongside the counts.
    """
    lo, hi = bounds
    pts = np.concatenate([np.asarray(c, dtype=float).reshape(-1, 3) for c in clouds])
    idx = np.floor((pts - lo) / (hi - lo) * grid_res).astype(int)
    outside = np.any((pts < lo) | (pts > hi), axis=1)
    idx = np.clip(idx, 0, grid_res - 1)
    flat = np.ravel_multi_index(idx.T, (grid_res,) * 3)
    counts = np.bincount(flat, minlength=grid_res ** 3).astype(float)
    return counts, int(outside.sum())


def _kl(p, q):
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def jsd_from_counts(a, b) -> float:
    p, q = a / a.sum(), b / b.sum()
    m = 0.5 * (p + q)
    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def jsd(X_set, Y_set, grid_res: int = 28, bounds=(-0.5, 0.5)) -> float:
    """Jensen-Shannon divergence (natural log) of pooled voxel occupancies."""
    a, na = voxel_histogram(X_set, grid_res, bounds)
    b, nb = voxel_histogram(Y_set, grid_res, bounds)
    if na or nb:
        log.warning("jsd: %d + %d points outside %s clamped to the boundary", na, nb, bounds)
    return jsd_from_counts(a, b)


def self_similarity(model: PartsModel, A=None):
    """(mean, min) Chamfer distance over all pairs of canonical part point sets."""
    Y = part_canonical_points(model, A)
    M_T = len(Y)
    if M_T < 2:
        raise ValueError("self-similarity needs at least two parts")
    d = [chamfer(Y[i], Y[j]) for i in range(M_T) for j in range(i + 1, M_T)]
    return float(np.mean(d)), float(np.min(d))


class PartStats(NamedTuple):
    counts: np.ndarray
    sdev: float


def counts_sdev(counts) -> float:
    """Population standard deviation of per-part point counts."""
    return float(np.std(np.asarray(counts, dtype=float)))


def part_point_stats(X, model: PartsModel, A=None) -> PartStats:
    """Points of X per part under the nearest-primitive partition."""
    if A is None:
        A = freeze_assignment(model)
    labels = partition_labels(np.asarray(X, dtype=float), _Parts(model, A))
    counts = np.bincount(labels, minlength=model.M_T)
    return PartStats(counts, counts_sdev(counts))


def balanced_resample(model: PartsModel, train_counts, rng: np.random.Generator,
                      n_total: int | None = None):
    """Downsample each assembled part in proportion to its training share.

    Part m keeps round(n_total * c_m / sum(c)) of its N_p points (at most
    N_p), chosen uniformly without replacement.  Returns (points, part index).
    """
    c = np.asarray(train_counts, dtype=float)
    if c.shape != (model.M_T,) or np.any(c < 0) or c.sum() <= 0:
        raise ValueError("train_counts needs one non-negative entry per part")
    N = model.N_p * model.M_T if n_total is None else int(n_total)
    want = np.minimum(np.rint(N * c / c.sum()).astype(int), model.N_p)
    asm = assemble(model)
    Y = asm.Y.reshape(model.M_T, model.N_p, 3)
    keep = [np.sort(rng.choice(model.N_p, size=k, replace=False)) for k in want]
    pts = np.concatenate([Y[m, k] for m, k in enumerate(keep)])
    part = np.concatenate([np.full(len(k), m) for m, k in enumerate(keep)])
    return pts, part

"""Reconstruction losses and the two stage objectives, with analytic gradients.

Every loss works on a ``_Parts`` view: the per-part quantities obtained by
pushing the shape parameters through the assignment.  Losses add their
gradient into the view's accumulators; ``_Parts.gradients`` then maps those
back onto the model parameters (including the logits, via the
straight-through rule).

Nearest-neighbour queries and the point-to-part partition are looked up in a
``LossContext``.  A frozen context reuses them across evaluations, which is
what the finite-difference checks need.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (Pose, Superquadric, indicator_kernel, quat_rotation_jacobian,
                       radial_kernel, surface_angles, surface_kernel, to_canonical,
                       to_object)
from .model import PARAM_KEYS, PartsModel, flatten, freeze_assignment, unflatten
from .spa import AssignmentMatrix, assignment_loss_grad, soft_assignment

log = logging.getLogger(__name__)

N_SURFACE = 64


@dataclass
class LossWeights:
    w_o: float = 0.0
    w_d: float = 0.0
    w_a: float = 0.1
    s: float = 1.0
    c1: float = 4.0

    def __post_init__(self):
        for name in ("w_o", "w_d", "w_a", "s"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not self.c1 > 0:
            raise ValueError(f"c1 must be positive, got {self.c1}")


PRESETS = {
    "table": LossWeights(w_o=1e-6, w_d=1e-6, w_a=0.1, s=1.3),
    "chair": LossWeights(w_o=2e-3, w_d=3e-3, w_a=0.1, s=1.5),
    "airplane": LossWeights(w_o=1e-3, w_d=1e-5, w_a=0.1, s=1.0),
}


def preset(name: str) -> LossWeights:
    try:
        p = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return LossWeights(p.w_o, p.w_d, p.w_a, p.s, p.c1)


@dataclass
class LossReport:
    total: float
    per_term: dict
    weights: dict
    gradients: dict = field(default_factory=dict)

    @property
    def flat_gradient(self) -> np.ndarray:
        return flatten(self.gradients)


class LossContext:
    """Cached partition, nearest-neighbour indices and surface sample angles."""

    def __init__(self, X, n_surface: int = N_SURFACE, rng=None, frozen: bool = False,
                 tree=None):
        self.X = np.asarray(X, dtype=float)
        self.tree = cKDTree(self.X) if tree is None else tree
        self.angles = surface_angles(n_surface, rng)
        self.frozen = frozen
        self._cache = {}

    def get(self, key):
        return self._cache.get(key) if self.frozen else None

    def put(self, key, value):
        self._cache[key] = value
        return value


# ---------------------------------------------------------------------------
# Chamfer


def _as_cloud(P, name):
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise ValueError(f"chamfer distance of an empty cloud ({name})")
    return P


def _nearest(src, dst):
    return cKDTree(dst).query(src)[1]


def chamfer_grad(X, Y, nn=None):
    """Chamfer distance with mean squared nearest-neighbour terms both ways.

    Returns (value, dX, dY, nn) where ``nn`` holds the two index arrays used;
    passing them back freezes the matching.
    """
    X, Y = _as_cloud(X, "X"), _as_cloud(Y, "Y")
    if nn is None:
        nn = (_nearest(X, Y), _nearest(Y, X))
    ix, iy = nn
    dxy = X - Y[ix]
    dyx = Y - X[iy]
    value = (dxy ** 2).sum() / len(X) + (dyx ** 2).sum() / len(Y)
    gx = 2 * dxy / len(X)
    gy = 2 * dyx / len(Y)
    dX = gx.copy()
    dY = gy.copy()
    np.add.at(dY, ix, -gx)
    np.add.at(dX, iy, -gy)
    return float(value), dX, dY, nn


def chamfer(X, Y) -> float:
    return chamfer_grad(X, Y)[0]


# ---------------------------------------------------------------------------
# per-part view with gradient accumulators


class _Parts:
    def __init__(self, model: PartsModel, A: AssignmentMatrix, selection=None):
        self.model, self.A = model, A
        W = A.hard if selection is None else np.asarray(selection, dtype=float)
        self.W = W
        self.alpha = W.T @ model.alpha
        self.eps = W.T @ model.eps
        self.taper = W.T @ model.taper
        self.R, self.J = quat_rotation_jacobian(model.quat)
        self.t = model.trans
        M_T = model.M_T
        self.d_alpha = np.zeros((M_T, 3))
        self.d_eps = np.zeros((M_T, 2))
        self.d_taper = np.zeros((M_T, 2))
        self.dR = np.zeros((M_T, 3, 3))
        self.dt = np.zeros((M_T, 3))
        self.d_shape_alpha = np.zeros_like(model.alpha)
        self.dW = np.zeros_like(W)
        self._points = None
        self._d_points = None

    @property
    def points(self):
        if self._points is None:
            self._points = np.einsum("im,inc->mnc", self.W, self.model.points)
        return self._points

    @property
    def d_points(self):
        if self._d_points is None:
            self._d_points = np.zeros_like(self.points)
        return self._d_points

    def surface(self, angles):
        """Object-space surface samples (M_T, n, 3) and a backward closure."""
        S, s_back = surface_kernel(self.alpha, self.eps, self.taper, *angles)
        So, o_back = to_object(S, self.R, self.t)

        def backward(dSo):
            dS, dR, dt = o_back(dSo)
            self.dR += dR
            self.dt += dt
            da, de, dk = s_back(dS)
            self.d_alpha += da
            self.d_eps += de
            self.d_taper += dk

        return So, backward

    def canonical_per_point(self, X, labels):
        u, c_back = to_canonical(X, self.R[labels], self.t[labels])

        def backward(du):
            dx, dR, dt = c_back(du)
            np.add.at(self.dR, labels, dR)
            np.add.at(self.dt, labels, dt)
            return dx

        return u, backward

    def add_primitive_grads(self, labels, da, de, dk):
        np.add.at(self.d_alpha, labels, da)
        np.add.at(self.d_eps, labels, de)
        np.add.at(self.d_taper, labels, dk)

    def per_point_primitives(self, labels):
        return self.alpha[labels], self.eps[labels], self.taper[labels]

    def gradients(self) -> dict:
        m, W = self.model, self.W
        dW = self.dW.copy()
        g = {}
        for key, d in (("alpha", self.d_alpha), ("eps", self.d_eps), ("taper", self.d_taper)):
            g[key] = W @ d
            dW += getattr(m, key) @ d.T
        g["alpha"] += self.d_shape_alpha
        if self._d_points is not None:
            g["points"] = np.einsum("im,mnc->inc", W, self._d_points)
            dW += np.einsum("inc,mnc->im", m.points, self._d_points)
        else:
            g["points"] = np.zeros_like(m.points)
        g["quat"] = np.einsum("mij,mijk->mk", self.dR, self.J)
        g["trans"] = self.dt.copy()
        g["logits"] = self.A.logits_grad(dW)
        return g


# ---------------------------------------------------------------------------
# partition


def _radial_table(X, alpha, eps, taper, R, t):
    """(N, M_T) radial distances of every point to every posed primitive."""
    N, M = len(X), len(alpha)
    lab = np.repeat(np.arange(M)[None], N, axis=0).ravel()
    Xr = np.repeat(X, M, axis=0)
    u = np.einsum("nij,ni->nj", R[lab], Xr - t[lab])
    d, _ = radial_kernel(u, alpha[lab], eps[lab], taper[lab])
    return d.reshape(N, M)


def partition_labels(X, parts: _Parts) -> np.ndarray:
    d = _radial_table(X, parts.alpha, parts.eps, parts.taper, parts.R, parts.t)
    return np.argmin(d, axis=1)  # first minimum -> lowest part index


def partition_by_primitive(X, primitives) -> list:
    """Split point indices by nearest posed primitive (radial distance).

    ``primitives`` is a sequence of (Superquadric, Pose) pairs.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    alpha = np.array([p.alpha for p, _ in primitives])
    eps = np.array([p.eps for p, _ in primitives])
    taper = np.array([p.taper for p, _ in primitives])
    R = np.array([T.rotation for _, T in primitives])
    t = np.array([T.t for _, T in primitives])
    labels = np.argmin(_radial_table(X, alpha, eps, taper, R, t), axis=1)
    return [np.flatnonzero(labels == m) for m in range(len(primitives))]


def _labels(ctx: LossContext, parts: _Parts):
    labels = ctx.get("labels")
    if labels is None:
        labels = ctx.put("labels", partition_labels(ctx.X, parts))
    return labels


# ---------------------------------------------------------------------------
# individual terms; each returns its value and accumulates scale * gradient


def _points_term(ctx, parts: _Parts, scale=1.0):
    X = ctx.X
    labels = _labels(ctx, parts)
    total = 0.0
    for m in range(parts.model.M_T):
        idx = np.flatnonzero(labels == m)
        src = X[idx] if len(idx) else X.mean(axis=0, keepdims=True)
        v = src - parts.t[m]
        xh = v @ parts.R[m]
        key = ("points_nn", m)
        val, dxh, dyh, nn = chamfer_grad(xh, parts.points[m], ctx.get(key))
        ctx.put(key, nn)
        total += val
        if scale:
            dxh = scale * dxh
            parts.dR[m] += v.T @ dxh
            parts.dt[m] -= parts.R[m] @ dxh.sum(axis=0)
            parts.d_points[m] += scale * dyh
    return total


def _prim_to_points_term(ctx, parts: _Parts, scale=1.0):
    So, back = parts.surface(ctx.angles)
    flat = So.reshape(-1, 3)
    nn = ctx.get("surface_nn")
    if nn is None:
        nn = ctx.put("surface_nn", ctx.tree.query(flat)[1])
    diff = flat - ctx.X[nn]
    value = (diff ** 2).sum() / len(flat)
    if scale:
        back((scale * 2 * diff / len(flat)).reshape(So.shape))
    return float(value)


def _points_to_prim_term(ctx, parts: _Parts, scale=1.0):
    X = ctx.X
    labels = _labels(ctx, parts)
    u, c_back = parts.canonical_per_point(X, labels)
    d, r_back = radial_kernel(u, *parts.per_point_primitives(labels))
    value = d.mean()
    if scale:
        du, da, de, dk = r_back(np.full(len(X), scale / len(X)))
        parts.add_primitive_grads(labels, da, de, dk)
        c_back(du)
    return float(value)


def _overlap_term(ctx, parts: _Parts, s: float, scale=1.0):
    M_T = parts.model.M_T
    if M_T < 2:
        return 0.0
    So, back = parts.surface(ctx.angles)
    n = So.shape[1]
    w = 1.0 / (M_T * (M_T - 1) * n)
    dSo = np.zeros_like(So)
    total = 0.0
    for m in range(M_T):
        others = [k for k in range(M_T) if k != m]
        y = So[others].reshape(-1, 3)
        lab = np.full(len(y), m)
        u, c_back = to_canonical(y, parts.R[lab], parts.t[lab])
        H, h_back = indicator_kernel(u, *parts.per_point_primitives(lab))
        gap = s - H
        active = gap > 0
        total += w * gap[active].sum()
        if scale:
            du, da, de, dk = h_back(np.where(active, -scale * w, 0.0))
            parts.d_alpha[m] += da.sum(0)
            parts.d_eps[m] += de.sum(0)
            parts.d_taper[m] += dk.sum(0)
            dy, dR, dt = c_back(du)
            parts.dR[m] += dR.sum(0)
            parts.dt[m] += dt.sum(0)
            dSo[others] += dy.reshape(len(others), n, 3)
    if scale:
        back(dSo)
    return float(total)


def _diversity_term(parts: _Parts, c1: float, scale=1.0):
    alpha = parts.model.alpha
    value, grad = diversity_loss_grad(alpha, c1)
    if scale:
        parts.d_shape_alpha += scale * grad
    return value


def _assignment_term(parts: _Parts, scale=1.0):
    value, grad = assignment_loss_grad(parts.W)
    if scale:
        parts.dW += scale * grad
    return value


def diversity_loss_grad(alphas, c1: float = 4.0):
    alphas = np.asarray(alphas, dtype=float)
    M = len(alphas)
    if M < 2:
        return 0.0, np.zeros_like(alphas)
    diff = alphas[:, None, :] - alphas[None, :, :]
    D = (diff ** 2).sum()
    c = -c1 / (M * (M - 1))
    value = np.tanh(c * D)
    dD = 4 * diff.sum(axis=1)
    return float(value), (1 - value ** 2) * c * dD


def diversity_loss(alphas, c1: float = 4.0) -> float:
    """Squashed negative spread of the shape scales, in (-1, 0]."""
    return diversity_loss_grad(alphas, c1)[0]


# ---------------------------------------------------------------------------
# public single-term API


def _view(X, model, A=None, ctx=None, n_surface=N_SURFACE, rng=None):
    if A is None:
        A = freeze_assignment(model)
    if ctx is None:
        ctx = LossContext(X, n_surface, rng)
    return _Parts(model, A), ctx


def points_loss(X, model: PartsModel, A=None, ctx=None) -> float:
    """Sum over parts of the canonical-frame Chamfer distance."""
    parts, ctx = _view(X, model, A, ctx)
    return _points_term(ctx, parts, scale=0.0)


def prim_points_loss(X, model: PartsModel, A=None, ctx=None, n_surface=N_SURFACE,
                     rng=None, return_terms=False):
    """Primitive-to-points plus points-to-primitive distance."""
    parts, ctx = _view(X, model, A, ctx, n_surface, rng)
    px = _prim_to_points_term(ctx, parts, scale=0.0)
    xp = _points_to_prim_term(ctx, parts, scale=0.0)
    return (px + xp, px, xp) if return_terms else px + xp


def overlap_loss(primitives, poses, s: float = 1.0, n_surface=N_SURFACE, rng=None) -> float:
    """Mean hinge ``max(s - H, 0)`` of other parts' surface samples inside each part."""
    if isinstance(s, LossWeights):
        s = s.s
    M = len(primitives)
    if M < 2:
        return 0.0
    A = AssignmentMatrix.draw(np.eye(M))
    model = PartsModel.from_parts(primitives, np.zeros((M, 1, 3)), poses, np.eye(M))
    parts = _Parts(model, A)
    ctx = LossContext(np.zeros((1, 3)), n_surface, rng)
    return _overlap_term(ctx, parts, s, scale=0.0)


# ---------------------------------------------------------------------------
# stage objectives


def _report(terms: dict, weights: dict, parts: _Parts | None) -> LossReport:
    total = float(sum(weights[k] * terms[k] for k in weights))
    return LossReport(total, terms, weights, parts.gradients() if parts is not None else {})


def stage1_objective(X, model: PartsModel, weights: LossWeights, A=None, ctx=None,
                     selection=None, n_surface=N_SURFACE, rng=None,
                     grad: bool = True) -> LossReport:
    """Primitive stage: L_r + w_o L_o + w_d L_d + w_a L_a."""
    if A is None:
        A = freeze_assignment(model)
    if ctx is None:
        ctx = LossContext(X, n_surface, rng)
    parts = _Parts(model, A, selection)
    k = 1.0 if grad else 0.0
    terms = {
        "r_px": _prim_to_points_term(ctx, parts, k),
        "r_xp": _points_to_prim_term(ctx, parts, k),
        "o": _overlap_term(ctx, parts, weights.s, k * weights.w_o),
        "d": _diversity_term(parts, weights.c1, k * weights.w_d),
        "a": _assignment_term(parts, k * weights.w_a),
    }
    w = {"r_px": 1.0, "r_xp": 1.0, "o": weights.w_o, "d": weights.w_d, "a": weights.w_a}
    return _report(terms, w, parts if grad else None)


def stage2_objective(X, model: PartsModel, weights: LossWeights, A=None, ctx=None,
                     selection=None, grad: bool = True) -> LossReport:
    """Points stage: L_p + w_a L_a (primitives only enter through the partition)."""
    if A is None:
        A = freeze_assignment(model)
    if ctx is None:
        ctx = LossContext(X)
    parts = _Parts(model, A, selection)
    k = 1.0 if grad else 0.0
    terms = {"p": _points_term(ctx, parts, k), "a": _assignment_term(parts, k * weights.w_a)}
    return _report(terms, {"p": 1.0, "a": weights.w_a}, parts if grad else None)


def single_term_objective(name: str, X, model, weights, A=None, ctx=None, selection=None,
                          grad: bool = True):
    """One loss term as a LossReport (used by the gradient checks)."""
    if A is None:
        A = freeze_assignment(model)
    if ctx is None:
        ctx = LossContext(X)
    parts = _Parts(model, A, selection)
    k = 1.0 if grad else 0.0
    if name == "p":
        v = _points_term(ctx, parts, k)
    elif name == "r":
        v = _prim_to_points_term(ctx, parts, k) + _points_to_prim_term(ctx, parts, k)
    elif name == "o":
        v = _overlap_term(ctx, parts, weights.s, k)
    elif name == "d":
        v = _diversity_term(parts, weights.c1, k)
    elif name == "a":
        v = _assignment_term(parts, k)
    else:
        raise ValueError(f"unknown term {name!r}")
    return _report({name: v}, {name: 1.0}, parts if grad else None)


OBJECTIVES = {"stage1": stage1_objective, "stage2": stage2_objective}


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class FDReport:
    max_rel_error: float
    per_block: dict
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


def finite_diff_check(objective, params, h: float = 1e-5, tol: float = 1e-4,
                      blocks: dict | None = None) -> FDReport:
    """Compare ``objective(params) -> (value, grad)`` with central differences.

    The relative error of a block is max|analytic - numeric| / max|numeric|
    over the block; ``blocks`` maps names to index slices (default: one block).
    An ``objective.value`` attribute, if present, is used for the cheaper
    value-only evaluations.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.array(params, dtype=float)
    _, analytic = objective(x)
    analytic = np.asarray(analytic, dtype=float)
    value = getattr(objective, "value", lambda v: _value(objective(v)))
    numeric = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        numeric[i] = (value(xp) - value(xm)) / (2 * h)
    blocks = blocks or {"all": slice(None)}
    per_block = {}
    for name, sl in blocks.items():
        err = np.abs(analytic[sl] - numeric[sl]).max(initial=0.0)
        scale = np.abs(numeric[sl]).max(initial=0.0)
        per_block[name] = err / scale if scale > 0 else (0.0 if err < 1e-12 else np.inf)
    return FDReport(max(per_block.values()), per_block, analytic, numeric, tol)


def _value(out):
    return out[0] if isinstance(out, tuple) else out


def param_blocks(model: PartsModel, keys=PARAM_KEYS) -> dict:
    blocks, i = {}, 0
    for k in keys:
        n = getattr(model, k).size
        blocks[k] = slice(i, i + n)
        i += n
    return blocks


def frozen_objective(evaluate, X, model: PartsModel, A: AssignmentMatrix | None = None,
                     ctx: LossContext | None = None):
    """Flat-parameter closure around ``evaluate(X, model, A=, ctx=, selection=, grad=)``.

    The context is frozen at ``model`` (partition and nearest neighbours held
    fixed).  Perturbing the logits moves the selection matrix along
    ``hard + soft(logits) - soft(logits_0)``, the path whose derivative the
    straight-through gradient reports.
    """
    if A is None:
        A = freeze_assignment(model)
    if ctx is None:
        ctx = LossContext(X)
    ctx.frozen = True
    g = A.noise if A.noise is not None else np.zeros_like(model.logits)
    base = model.params()
    soft0 = A.soft

    def run(vec, grad):
        p = unflatten(vec, base)
        m = model.replace(**p)
        soft = soft_assignment(m.logits, g, A.tau)
        Ai = AssignmentMatrix(A.hard, soft, A.tau, g)
        return evaluate(X, m, A=Ai, ctx=ctx, selection=A.hard + soft - soft0, grad=grad)

    def f(vec):
        rep = run(vec, True)
        return rep.total, rep.flat_gradient

    f.value = lambda vec: run(vec, False).total
    return f, flatten(base)

"""Rotations, rigid poses and tapered superquadric primitives.

Besides the public scalar/point API, this module holds the vectorised
kernels used by the losses.  Each kernel returns its value together with a
closure that maps an upstream gradient back onto the kernel inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS_MIN, EPS_MAX = 0.1, 1.9
TAPER_MAX = 0.9
ALPHA_MIN = 0.01
# taper factors below this are clamped; only reachable far outside the primitive
TAPER_FLOOR = 0.05
_TINY = 1e-300


class DegenerateRotationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# quaternions and poses


def _normalize_quat(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateRotationError("degenerate rotation: zero quaternion")
    return q / n, n


def _rotation_from_unit(qh):
    w, x, y, z = np.moveaxis(qh, -1, 0)
    R = np.empty(qh.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion, renormalised first.

    Accepts a single quaternion or a stack of shape (..., 4).
    """
    qh, _ = _normalize_quat(q)
    return _rotation_from_unit(qh)


def quat_rotation_jacobian(q):
    """R(q / |q|) and dR/dq of shape (..., 3, 3, 4)."""
    qh, n = _normalize_quat(q)
    R = _rotation_from_unit(qh)
    w, x, y, z = np.moveaxis(qh, -1, 0)
    zero = np.zeros_like(w)
    # dR/d(qh) ordered (w, x, y, z)
    J = np.stack([
        np.stack([np.stack([zero, zero, -4 * y, -4 * z], -1),
                  np.stack([-2 * z, 2 * y, 2 * x, -2 * w], -1),
                  np.stack([2 * y, 2 * z, 2 * w, 2 * x], -1)], -2),
        np.stack([np.stack([2 * z, 2 * y, 2 * x, 2 * w], -1),
                  np.stack([zero, -4 * x, zero, -4 * z], -1),
                  np.stack([-2 * x, -2 * w, 2 * z, 2 * y], -1)], -2),
        np.stack([np.stack([-2 * y, 2 * z, -2 * w, 2 * x], -1),
                  np.stack([2 * x, 2 * w, 2 * z, 2 * y], -1),
                  np.stack([zero, -4 * x, -4 * y, zero], -1)], -2),
    ], -3)
    # chain through qh = q / |q|
    P = (np.eye(4) - qh[..., :, None] * qh[..., None, :]) / n[..., None]
    return R, J @ P[..., None, :, :]


@dataclass
class Pose:
    """Rigid map canonical -> object: x -> R(q) x + t."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q, _ = _normalize_quat(np.asarray(self.q, dtype=float).reshape(4))
        self.t = np.asarray(self.t, dtype=float).reshape(3)

    @property
    def rotation(self) -> np.ndarray:
        return _rotation_from_unit(self.q)

    def apply(self, x):
        return pose_apply(self, x)

    def inverse_apply(self, y):
        return pose_inverse_apply(self, y)


def pose_apply(T: Pose, x) -> np.ndarray:
    """R(q) x + t for a point or an (N, 3) array of points."""
    x = np.asarray(x, dtype=float)
    return x @ T.rotation.T + T.t


def pose_inverse_apply(T: Pose, y) -> np.ndarray:
    """R(q)^T (y - t) for a point or an (N, 3) array of points."""
    y = np.asarray(y, dtype=float)
    return (y - T.t) @ T.rotation


# ---------------------------------------------------------------------------
# superquadrics


@dataclass
class Superquadric:
    alpha: np.ndarray
    eps: np.ndarray = field(default_factory=lambda: np.ones(2))
    taper: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(3)
        if np.any(self.alpha <= 0):
            raise ValueError(f"superquadric scales must be positive, got {self.alpha}")
        self.eps = np.clip(np.asarray(self.eps, dtype=float).reshape(2), EPS_MIN, EPS_MAX)
        self.taper = np.clip(np.asarray(self.taper, dtype=float).reshape(2),
                             -TAPER_MAX, TAPER_MAX)

    @classmethod
    def sphere(cls, r: float = 1.0) -> "Superquadric":
        return cls(alpha=np.full(3, r))


def _spow(c, e):
    return np.sign(c) * np.abs(c) ** e


def _safe_log_abs(c):
    a = np.abs(c)
    return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), 0.0)


def surface_kernel(alpha, eps, taper, eta, omega):
    """Tapered superquadric surface points.

    ``alpha``/``eps``/``taper`` have shapes (P, 3)/(P, 2)/(P, 2) and the
    angle arrays shape (n,).  Returns points of shape (P, n, 3) and a
    backward closure mapping d(points) to (d_alpha, d_eps, d_taper).
    """
    alpha = np.asarray(alpha, dtype=float)
    eps = np.asarray(eps, dtype=float)
    taper = np.asarray(taper, dtype=float)
    e1, e2 = eps[:, 0:1], eps[:, 1:2]
    ax, ay, az = alpha[:, 0:1], alpha[:, 1:2], alpha[:, 2:3]
    kx, ky = taper[:, 0:1], taper[:, 1:2]
    cn, sn = np.cos(eta)[None], np.sin(eta)[None]
    cw, sw = np.cos(omega)[None], np.sin(omega)[None]
    ce, se = _spow(cn, e1), _spow(sn, e1)
    cwe, swe = _spow(cw, e2), _spow(sw, e2)
    fx, fy = 1 + kx * se, 1 + ky * se
    x0, y0 = ax * ce * cwe, ay * ce * swe
    pts = np.stack([x0 * fx, y0 * fy, az * se], axis=-1)

    def backward(dpts):
        dx, dy, dz = dpts[..., 0], dpts[..., 1], dpts[..., 2]
        dx0, dy0 = dx * fx, dy * fy
        dse = dx * x0 * kx + dy * y0 * ky + dz * az
        dce = dx0 * ax * cwe + dy0 * ay * swe
        dcwe = dx0 * ax * ce
        dswe = dy0 * ay * ce
        d_alpha = np.stack([(dx0 * ce * cwe).sum(1), (dy0 * ce * swe).sum(1),
                            (dz * se).sum(1)], axis=-1)
        d_taper = np.stack([(dx * x0 * se).sum(1), (dy * y0 * se).sum(1)], axis=-1)
        d_e1 = (dce * ce * _safe_log_abs(cn) + dse * se * _safe_log_abs(sn)).sum(1)
        d_e2 = (dcwe * cwe * _safe_log_abs(cw) + dswe * swe * _safe_log_abs(sw)).sum(1)
        return d_alpha, np.stack([d_e1, d_e2], axis=-1), d_taper

    return pts, backward


def implicit_kernel(u, alpha, eps, taper):
    """Inside-outside function F at canonical points ``u`` (taper inverted).

    All inputs are per-point: u (N, 3), alpha (N, 3), eps (N, 2),
    taper (N, 2).  Returns F (N,) and a backward closure
    dF -> (du, d_alpha, d_eps, d_taper), all per point.
    """
    ux, uy, uz = u[:, 0], u[:, 1], u[:, 2]
    ax, ay, az = alpha[:, 0], alpha[:, 1], alpha[:, 2]
    e1, e2 = eps[:, 0], eps[:, 1]
    kx, ky = taper[:, 0], taper[:, 1]
    fx_raw, fy_raw = 1 + kx * uz / az, 1 + ky * uz / az
    fx, fy = np.maximum(fx_raw, TAPER_FLOOR), np.maximum(fy_raw, TAPER_FLOOR)
    X, Y, Z = ux / (fx * ax), uy / (fy * ay), uz / az
    A = np.abs(X) ** (2 / e2)
    B = np.abs(Y) ** (2 / e2)
    C = np.abs(Z) ** (2 / e1)
    G = np.maximum(A + B, _TINY)
    P = G ** (e2 / e1)
    F = P + C

    def backward(dF):
        lnG = np.log(G)
        dG = dF * (e2 / e1) * P / G
        de1 = -dF * P * lnG * e2 / e1 ** 2
        de2 = dF * P * lnG / e1
        dX = dG * (2 / e2) * _spow(X, 2 / e2 - 1)
        dY = dG * (2 / e2) * _spow(Y, 2 / e2 - 1)
        dZ = dF * (2 / e1) * _spow(Z, 2 / e1 - 1)
        de2 += dG * (-2 / e2 ** 2) * (A * _safe_log_abs(X) + B * _safe_log_abs(Y))
        de1 += dF * (-2 / e1 ** 2) * C * _safe_log_abs(Z)
        dfx = np.where(fx_raw >= TAPER_FLOOR, -dX * X / fx, 0.0)
        dfy = np.where(fy_raw >= TAPER_FLOOR, -dY * Y / fy, 0.0)
        du = np.stack([dX / (fx * ax), dY / (fy * ay),
                       dZ / az + (dfx * kx + dfy * ky) / az], axis=-1)
        d_alpha = np.stack([-dX * X / ax, -dY * Y / ay,
                            -dZ * Z / az - (dfx * kx + dfy * ky) * uz / az ** 2], axis=-1)
        d_taper = np.stack([dfx * uz / az, dfy * uz / az], axis=-1)
        return du, d_alpha, np.stack([de1, de2], axis=-1), d_taper

    return F, backward


def indicator_kernel(u, alpha, eps, taper):
    """Radially normalised indicator H = F ** eps1, with backward closure."""
    F, f_back = implicit_kernel(u, alpha, eps, taper)
    e1 = eps[:, 0]
    Fs = np.maximum(F, _TINY)
    H = np.where(F > 0, Fs ** e1, 0.0)

    def backward(dH):
        dF = np.where(F > 0, dH * e1 * H / Fs, 0.0)
        du, da, de, dk = f_back(dF)
        de[:, 0] += np.where(F > 0, dH * H * np.log(Fs), 0.0)
        return du, da, de, dk

    return H, backward


def radial_kernel(u, alpha, eps, taper):
    """Radial point-to-surface distance |u| * |1 - F ** (-eps1 / 2)|.

    At the primitive centre (F = 0) the distance is taken as min(alpha),
    with zero gradient.
    """
    F, f_back = implicit_kernel(u, alpha, eps, taper)
    e1 = eps[:, 0]
    r = np.linalg.norm(u, axis=-1)
    centre = (r == 0) | (F <= 0)
    Fs = np.where(centre, 1.0, F)
    Q = Fs ** (-e1 / 2)
    d = np.where(centre, alpha.min(axis=-1), r * np.abs(1 - Q))

    def backward(dd):
        dd = np.where(centre, 0.0, dd)
        dr = dd * np.abs(1 - Q)
        dQ = -dd * r * np.sign(1 - Q)
        dF = dQ * (-e1 / 2) * Q / Fs
        du, da, de, dk = f_back(dF)
        de[:, 0] += dQ * (-0.5) * Q * np.log(Fs)
        rs = np.where(r > 0, r, 1.0)
        du += (dr / rs)[:, None] * u
        return du, da, de, dk

    return d, backward


# ---------------------------------------------------------------------------
# public point-wise API


def _per_point(p: Superquadric, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = len(x)
    return (x, np.broadcast_to(p.alpha, (n, 3)), np.broadcast_to(p.eps, (n, 2)),
            np.broadcast_to(p.taper, (n, 2)))


def _squeeze_like(values, x):
    return float(values[0]) if np.ndim(x) == 1 else values


def sq_surface_point(p: Superquadric, eta, omega) -> np.ndarray:
    """Surface point r(eta, omega) of a tapered superquadric.

    Accepts scalar angles (returns a 3-vector) or equal-length arrays.
    """
    scalar = np.ndim(eta) == 0
    pts, _ = surface_kernel(p.alpha[None], p.eps[None], p.taper[None],
                            np.atleast_1d(np.asarray(eta, dtype=float)),
                            np.atleast_1d(np.asarray(omega, dtype=float)))
    return pts[0, 0] if scalar else pts[0]


def surface_angles(n: int, rng: np.random.Generator | None = None):
    """(eta, omega) pairs on an n-cell grid, jittered within cells when rng is given.

    Without an rng the cell centres of an evenly strided subset are used.
    """
    if n < 1:
        raise ValueError("need at least one surface sample")
    k_eta = max(1, math.ceil(math.sqrt(n / 2)))
    k_omega = math.ceil(n / k_eta)
    total = k_eta * k_omega
    if rng is None:
        cells = np.floor(np.arange(n) * total / n).astype(int)
        jit = np.full((n, 2), 0.5)
    else:
        cells = np.sort(rng.choice(total, size=n, replace=False))
        jit = rng.random((n, 2))
    i_eta, i_omega = np.divmod(cells, k_omega)
    eta = -np.pi / 2 + (i_eta + jit[:, 0]) * (np.pi / k_eta)
    omega = -np.pi + (i_omega + jit[:, 1]) * (2 * np.pi / k_omega)
    return eta, omega


def sq_sample_surface(p: Superquadric, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """n points on the surface from a jittered (eta, omega) grid."""
    eta, omega = surface_angles(n, rng)
    return sq_surface_point(p, eta, omega)


def sq_implicit(p: Superquadric, x):
    """F(x) in the primitive frame: < 1 inside, 1 on the surface, > 1 outside."""
    F, _ = implicit_kernel(*_per_point(p, x))
    return _squeeze_like(F, x)


def sq_indicator(p: Superquadric, x):
    H, _ = indicator_kernel(*_per_point(p, x))
    return _squeeze_like(H, x)


def sq_radial_distance(p: Superquadric, x):
    d, _ = radial_kernel(*_per_point(p, x))
    return _squeeze_like(d, x)


# ---------------------------------------------------------------------------
# posed batches


def to_object(points, R, t):
    """Map per-part canonical points (P, n, 3) into object space.

    Returns the mapped points and a backward closure
    d(out) -> (d_points, dR, dt).
    """
    out = points @ np.swapaxes(R, -1, -2) + t[:, None, :]

    def backward(dout):
        return dout @ R, np.einsum("pni,pnj->pij", dout, points), dout.sum(1)

    return out, backward


def to_canonical(x, R, t):
    """u = R^T (x - t) per point with per-point (R, t) of shape (N, 3, 3)/(N, 3).

    Backward maps du -> (dx, dR, dt), per point.
    """
    v = x - t
    u = np.einsum("nij,ni->nj", R, v)

    def backward(du):
        dx = np.einsum("nij,nj->ni", R, du)
        dR = v[:, :, None] * du[:, None, :]
        return dx, dR, -dx

    return u, backward


def sq_sample_surface_uniform(p: Superquadric, n: int, rng: np.random.Generator,
                              oversample: int = 8) -> np.ndarray:
    """n surface points spread roughly uniformly by area.

    Parametric samples crowd near edges for small exponents; candidates from
    the jittered grid are resampled with weights proportional to the local
    area element.
    """
    eta, omega = surface_angles(n * oversample, rng)
    h = 1e-6
    d_eta = (sq_surface_point(p, np.clip(eta + h, -np.pi / 2, np.pi / 2), omega)
             - sq_surface_point(p, np.clip(eta - h, -np.pi / 2, np.pi / 2), omega))
    d_omega = (sq_surface_point(p, eta, omega + h) - sq_surface_point(p, eta, omega - h))
    area = np.linalg.norm(np.cross(d_eta, d_omega), axis=1)
    area = np.where(np.isfinite(area), area, 0.0) + 1e-300
    pick = rng.choice(len(eta), size=n, replace=False, p=area / area.sum())
    return sq_surface_point(p, eta[np.sort(pick)], omega[np.sort(pick)])

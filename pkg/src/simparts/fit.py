"""Direct per-object fitting of a PartsModel with the two-stage schedule.

Stage 1 fits primitives, poses and assignment logits; stage 2 fits the
canonical point sets, poses and logits with primitives frozen.  Several
restarts are run and the one with the lowest final stage-2 objective wins.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.mixture import GaussianMixture

from .geometry import ALPHA_MIN, sq_sample_surface_uniform
from .losses import LossContext, LossWeights, N_SURFACE, stage1_objective, stage2_objective
from .model import PartsModel
from .spa import AssignmentMatrix, sample_gumbel

log = logging.getLogger(__name__)

STAGE1_KEYS = ("alpha", "eps", "taper", "quat", "trans", "logits")
STAGE2_KEYS = ("points", "quat", "trans", "logits")


class FitDivergedError(RuntimeError):
    """Every restart produced a non-finite objective."""


@dataclass
class FitConfig:
    stage1_iters: int = 200
    stage2_iters: int = 800
    step_size: float = 1e-2
    step_size2: float = 5e-3
    logit_step_size: float = 0.1
    pose_step_size2: float = 1e-3
    final_lr_fraction2: float = 0.05
    reseed_points: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    restarts: int = 5
    n_points_per_part: int = 512
    n_surface: int = N_SURFACE
    tau: float = 1.0
    logit_prior: float = 3.0

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if min(self.step_size, self.step_size2, self.logit_step_size, self.pose_step_size2) <= 0:
            raise ValueError("step sizes must be positive")
        if not 0 < self.final_lr_fraction2 <= 1:
            raise ValueError("final_lr_fraction2 must be in (0, 1]")
        if self.logit_prior < 0:
            raise ValueError("logit_prior must be non-negative")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if self.n_points_per_part < 1:
            raise ValueError("need at least one point per part")


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 lr_overrides: dict | None = None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.lr_overrides = lr_overrides or {}
        self.scale = 1.0          # global multiplier for schedules
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            lr = self.scale * self.lr_overrides.get(k, self.lr)
            p -= (lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TraceRow:
    restart: int
    stage: int
    iteration: int
    total: float
    terms: dict


@dataclass
class FitResult:
    model: PartsModel
    trace: list
    finals: list          # final stage-2 total per restart (nan if diverged)
    best_restart: int
    seconds: float = 0.0

    def trace_table(self) -> str:
        return trace_table(self.trace)


def trace_table(trace) -> str:
    """Plain-text table, one row per iteration, for plotting."""
    names = []
    for row in trace:
        for k in row.terms:
            if k not in names:
                names.append(k)
    lines = ["# restart stage iteration total " + " ".join(names)]
    for row in trace:
        vals = " ".join(repr(float(row.terms.get(k, np.nan))) for k in names)
        lines.append(f"{row.restart} {row.stage} {row.iteration} {row.total!r} {vals}")
    return "\n".join(lines) + "\n"


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(restart + 1)[restart])


def _cluster(X, k, rng):
    """Soft k-means with full covariances, so thin and flat parts separate."""
    if k == 1:
        return np.zeros(len(X), dtype=int)
    gm = GaussianMixture(k, covariance_type="full", n_init=20, init_params="random_from_data",
                         max_iter=300, random_state=int(rng.integers(2 ** 31 - 1)))
    labels = gm.fit_predict(X)
    # every part needs at least one point
    for m in range(k):
        if not np.any(labels == m):
            labels[np.argmax(gm.predict_proba(X)[:, m])] = m
    return labels


def _diverse(halves, k):
    """Pick k clusters with mutually distant box half-extents, largest first."""
    chosen = [int(np.argmax(halves.prod(axis=1)))]
    while len(chosen) < k:
        d = np.min(np.linalg.norm(halves[:, None] - halves[chosen][None], axis=-1), axis=1)
        d[chosen] = -1
        chosen.append(int(np.argmax(d)))
    return chosen


def init_model(X, M_s: int, M_T: int, rng: np.random.Generator, n_points: int = 512,
               tau: float = 1.0, logit_prior: float = 0.0) -> PartsModel:
    """Poses at cluster centroids, shapes from cluster bounding boxes.

    logit_prior > 0 adds that much to the logit of the shape whose box is
    closest to each cluster's box, so early Gumbel draws do not average
    unrelated parts into one shape.
    """
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ValueError("cannot initialise from an empty cloud")
    if not 1 <= M_s <= M_T:
        raise ValueError(f"need 1 <= M_s <= M_T, got M_s={M_s}, M_T={M_T}")
    if len(X) < M_T:
        raise ValueError(f"{len(X)} points cannot seed {M_T} parts")
    labels = _cluster(X, M_T, rng)
    centres = np.array([X[labels == m].mean(axis=0) for m in range(M_T)])
    halves = np.array([np.maximum((X[labels == m].max(0) - X[labels == m].min(0)) / 2, ALPHA_MIN)
                       for m in range(M_T)])
    alpha = halves[_diverse(halves, M_s)]
    points = rng.uniform(-1.0, 1.0, (M_s, n_points, 3)) * alpha[:, None, :]
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (M_T, 1))
    logits = rng.normal(0.0, 0.01, (M_s, M_T))
    if logit_prior > 0:
        nearest = np.argmin(np.linalg.norm(halves[:, None] - alpha[None], axis=-1), axis=1)
        logits[nearest, np.arange(M_T)] += logit_prior
    return PartsModel(alpha=alpha, eps=np.ones((M_s, 2)), taper=np.zeros((M_s, 2)),
                      points=points, quat=quat, trans=centres, logits=logits, tau=tau)


def seed_points_on_primitives(model: PartsModel, rng: np.random.Generator) -> PartsModel:
    """Replace each canonical point set by samples of its shape's primitive surface.

    Done between the stages: pose gradients in stage 2 are only informative
    once the canonical points already resemble the parts they explain.
    """
    for i in range(model.M_s):
        model.points[i] = sq_sample_surface_uniform(model.primitive(i), model.N_p, rng)
    return model


def _run_stage(X, model, cfg, stage, rng, tree, trace, restart):
    iters = cfg.stage1_iters if stage == 1 else cfg.stage2_iters
    keys = STAGE1_KEYS if stage == 1 else STAGE2_KEYS
    overrides = {"logits": cfg.logit_step_size}
    if stage == 2:
        # poses and shared canonical points can co-rotate without changing L_p;
        # small pose steps keep that drift from carrying the primitives off the data
        overrides.update(quat=cfg.pose_step_size2, trans=cfg.pose_step_size2)
    opt = Adam(cfg.step_size if stage == 1 else cfg.step_size2, lr_overrides=overrides)
    for it in range(iters):
        if stage == 2:
            # cosine decay to final_lr_fraction2 of the initial steps
            f = cfg.final_lr_fraction2
            opt.scale = f + (1 - f) * 0.5 * (1 + np.cos(np.pi * it / max(iters - 1, 1)))
        A = AssignmentMatrix.draw(model.logits, sample_gumbel(model.M_s, model.M_T, rng),
                                  model.tau)
        if stage == 1:
            ctx = LossContext(X, cfg.n_surface, rng, tree=tree)
            rep = stage1_objective(X, model, cfg.weights, A=A, ctx=ctx)
        else:
            rep = stage2_objective(X, model, cfg.weights, A=A, ctx=LossContext(X, 1, tree=tree))
        if not np.isfinite(rep.total) or not all(np.all(np.isfinite(rep.gradients[k]))
                                                 for k in keys):
            raise FloatingPointError(
                f"non-finite objective in stage {stage} at iteration {it}: {rep.per_term}")
        trace.append(TraceRow(restart, stage, it, rep.total, dict(rep.per_term)))
        opt.step({k: getattr(model, k) for k in keys}, rep.gradients)
        model.project()
    return model


def refine(X, model: PartsModel, config: FitConfig | None = None,
           rng: np.random.Generator | None = None, trace: list | None = None, restart: int = 0,
           tree=None) -> PartsModel:
    """Run the two-stage schedule from ``model`` (updated in place and returned)."""
    cfg = config or FitConfig()
    X = np.asarray(X, dtype=float)
    rng = restart_rng(cfg.seed, restart) if rng is None else rng
    trace = [] if trace is None else trace
    tree = cKDTree(X) if tree is None else tree
    with np.errstate(over="ignore", under="ignore"):
        _run_stage(X, model, cfg, 1, rng, tree, trace, restart)
        if cfg.reseed_points and cfg.stage2_iters > 0:
            seed_points_on_primitives(model, rng)
        _run_stage(X, model, cfg, 2, rng, tree, trace, restart)
    return model


def final_objective(X, model: PartsModel, weights: LossWeights) -> float:
    """Stage-2 objective at the deterministic (noise-free) assignment."""
    return stage2_objective(X, model, weights, grad=False).total


def fit(X, M_s: int, M_T: int, config: FitConfig | None = None) -> FitResult:
    """Fit a parts model to X; returns the best restart and the full trace."""
    cfg = config or FitConfig()
    X = np.asarray(X, dtype=float)
    if len(X) < M_T:
        raise ValueError(f"{len(X)} points cannot support {M_T} parts")
    tree = cKDTree(X)
    start = time.perf_counter()
    trace, finals, best, best_score = [], [], None, np.inf
    for r in range(cfg.restarts):
        rng = restart_rng(cfg.seed, r)
        model = init_model(X, M_s, M_T, rng, cfg.n_points_per_part, cfg.tau, cfg.logit_prior)
        try:
            refine(X, model, cfg, rng, trace, r, tree)
            score = final_objective(X, model, cfg.weights)
            if not np.isfinite(score):
                raise FloatingPointError("non-finite final objective")
        except FloatingPointError as exc:
            log.warning("restart %d diverged: %s", r, exc)
            finals.append(float("nan"))
            continue
        log.info("restart %d final stage-2 objective %.6g", r, score)
        finals.append(score)
        if score < best_score:
            best, best_score, best_r = model, score, r
    if best is None:
        raise FitDivergedError(f"all {cfg.restarts} restarts diverged")
    return FitResult(best, trace, finals, best_r, time.perf_counter() - start)

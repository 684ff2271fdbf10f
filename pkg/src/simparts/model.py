"""The parts model: M_s shared canonical shapes, M_T posed parts and the
assignment log-scores coupling them."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .geometry import (ALPHA_MIN, EPS_MAX, EPS_MIN, TAPER_MAX, Pose, Superquadric,
                       quat_to_rotation)
from .spa import AssignmentMatrix

PARAM_KEYS = ("alpha", "eps", "taper", "points", "quat", "trans", "logits")
PRIMITIVE_KEYS = ("alpha", "eps", "taper")
POSE_KEYS = ("quat", "trans")


@dataclass
class PartsModel:
    alpha: np.ndarray   # (M_s, 3)
    eps: np.ndarray     # (M_s, 2)
    taper: np.ndarray   # (M_s, 2)
    points: np.ndarray  # (M_s, N_p, 3) canonical point sets
    quat: np.ndarray    # (M_T, 4)
    trans: np.ndarray   # (M_T, 3)
    logits: np.ndarray  # (M_s, M_T)
    tau: float = 1.0

    def __post_init__(self):
        for k in PARAM_KEYS:
            setattr(self, k, np.array(getattr(self, k), dtype=float))
        M_s, M_T = self.logits.shape
        if M_s < 1 or M_T < M_s:
            raise ValueError(f"need 1 <= M_s <= M_T, got M_s={M_s}, M_T={M_T}")
        expected = {"alpha": (M_s, 3), "eps": (M_s, 2), "taper": (M_s, 2),
                    "quat": (M_T, 4), "trans": (M_T, 3)}
        for k, shp in expected.items():
            if getattr(self, k).shape != shp:
                raise ValueError(f"{k} has shape {getattr(self, k).shape}, expected {shp}")
        if self.points.ndim != 3 or self.points.shape[0] != M_s or self.points.shape[2] != 3:
            raise ValueError(f"points has shape {self.points.shape}, expected ({M_s}, N_p, 3)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @classmethod
    def from_parts(cls, primitives, canon_points, poses, logits, tau=1.0) -> "PartsModel":
        return cls(alpha=[p.alpha for p in primitives], eps=[p.eps for p in primitives],
                   taper=[p.taper for p in primitives], points=canon_points,
                   quat=[T.q for T in poses], trans=[T.t for T in poses],
                   logits=logits, tau=tau)

    @property
    def M_s(self) -> int:
        return self.logits.shape[0]

    @property
    def M_T(self) -> int:
        return self.logits.shape[1]

    @property
    def N_p(self) -> int:
        return self.points.shape[1]

    def primitive(self, i: int) -> Superquadric:
        return Superquadric(self.alpha[i], self.eps[i], self.taper[i])

    def pose(self, m: int) -> Pose:
        return Pose(self.quat[m], self.trans[m])

    @property
    def rotations(self) -> np.ndarray:
        return quat_to_rotation(self.quat)

    def params(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_KEYS}

    def copy(self) -> "PartsModel":
        return PartsModel(**{f.name: np.copy(getattr(self, f.name)) if f.name != "tau"
                             else self.tau for f in fields(self)})

    def replace(self, **params) -> "PartsModel":
        new = self.copy()
        for k, v in params.items():
            setattr(new, k, np.array(v, dtype=float))
        return new

    def project(self) -> "PartsModel":
        """Put parameters back on their feasible sets (in place)."""
        self.quat /= np.linalg.norm(self.quat, axis=1, keepdims=True)
        np.clip(self.eps, EPS_MIN, EPS_MAX, out=self.eps)
        np.clip(self.taper, -TAPER_MAX, TAPER_MAX, out=self.taper)
        np.maximum(self.alpha, ALPHA_MIN, out=self.alpha)
        return self

    def equals(self, other: "PartsModel") -> bool:
        return self.tau == other.tau and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in PARAM_KEYS)


def flatten(params: dict, keys=PARAM_KEYS) -> np.ndarray:
    return np.concatenate([np.ravel(params[k]) for k in keys])


def unflatten(vec, like: dict, keys=PARAM_KEYS) -> dict:
    out, i = {}, 0
    for k in keys:
        n = np.size(like[k])
        out[k] = np.reshape(vec[i:i + n], np.shape(like[k]))
        i += n
    return out


def freeze_assignment(model: PartsModel) -> AssignmentMatrix:
    """Deterministic readout: argmax of the logits with no Gumbel noise."""
    return AssignmentMatrix.draw(model.logits, None, model.tau)


class Assembly(NamedTuple):
    Y: np.ndarray                 # (N_p * M_T, 3) object-space points
    primitives: list              # [(Superquadric, Pose)] per part
    part_of: np.ndarray           # (N_p * M_T,) part index per point


def assemble(model: PartsModel, A: AssignmentMatrix | None = None) -> Assembly:
    """Select each part's shape and place it with the part pose."""
    if A is None:
        A = freeze_assignment(model)
    hot = A.hot
    R = model.rotations
    canon = model.points[hot]                                   # (M_T, N_p, 3)
    Y = np.einsum("mij,mnj->mni", R, canon) + model.trans[:, None, :]
    prims = [(model.primitive(i), model.pose(m)) for m, i in enumerate(hot)]
    part_of = np.repeat(np.arange(model.M_T), model.N_p)
    return Assembly(Y.reshape(-1, 3), prims, part_of)


def part_canonical_points(model: PartsModel, A: AssignmentMatrix | None = None) -> np.ndarray:
    """Per-part canonical point sets (M_T, N_p, 3), i.e. the selected shapes."""
    if A is None:
        A = freeze_assignment(model)
    return model.points[A.hot]

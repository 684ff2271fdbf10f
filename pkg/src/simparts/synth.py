"""Synthetic objects with known shared shapes, poses and part labels."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Pose, Superquadric, pose_apply, sq_sample_surface_uniform
from .losses import LossWeights, stage2_objective
from .model import PartsModel


class Template(str, Enum):
    TABLE4LEG = "Table4Leg"
    CHAIR_ARMS = "ChairArms"
    PLANE_WINGS = "PlaneWings"


@dataclass
class SynthSpec:
    template: Template = Template.TABLE4LEG
    noise_sigma: float = 0.0
    points_per_part: int = 512
    seed: int = 0
    n_canonical: int = 512

    def __post_init__(self):
        self.template = Template(self.template)
        if self.points_per_part < 8:
            raise ValueError("points_per_part must be at least 8")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _about(axis, angle):
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


_Z = (0, 0, 1)


def _layout(template: Template):
    """(shape primitives, [(shape index, Pose)] per part)."""
    if template is Template.TABLE4LEG:
        top = Superquadric([0.8, 0.5, 0.05], [0.2, 0.2])
        leg = Superquadric([0.05, 0.05, 0.4], [0.2, 0.2])
        parts = [(0, Pose(t=[0.0, 0.0, 0.45]))]
        # square legs placed by translation: a quarter turn of a square leg would
        # give the same surface with differently ordered samples
        for x, y in [(0.65, 0.35), (-0.65, 0.35), (-0.65, -0.35), (0.65, -0.35)]:
            parts.append((1, Pose(t=[x, y, 0.0])))
        return [top, leg], parts
    if template is Template.CHAIR_ARMS:
        seat = Superquadric([0.5, 0.5, 0.05], [0.2, 0.2])
        back = Superquadric([0.5, 0.05, 0.5], [0.2, 0.2], [0.0, 0.0])
        arm = Superquadric([0.05, 0.4, 0.15], [0.3, 0.3], [0.0, 0.2])
        parts = [(0, Pose(t=[0.0, 0.0, 0.0])), (1, Pose(t=[0.0, -0.5, 0.5])),
                 (2, Pose(t=[0.5, 0.0, 0.2])), (2, Pose(_about(_Z, np.pi), [-0.5, 0.0, 0.2]))]
        return [seat, back, arm], parts
    fuselage = Superquadric([0.8, 0.1, 0.1], [1.0, 1.0])
    wing = Superquadric([0.15, 0.5, 0.02], [0.5, 0.5], [0.3, 0.0])
    # the second wing is the first one turned half a revolution about the fuselage axis
    parts = [(0, Pose(t=[0.0, 0.0, 0.0])), (1, Pose(t=[0.0, 0.55, 0.0])),
             (1, Pose(_about((1, 0, 0), np.pi), [0.0, -0.55, 0.0]))]
    return [fuselage, wing], parts


def generate(spec: SynthSpec):
    """Sample a labelled cloud from a template; returns (X, labels, truth model)."""
    rng = np.random.default_rng(spec.seed)
    shapes, parts = _layout(spec.template)
    M_s, M_T = len(shapes), len(parts)
    canon = np.stack([sq_sample_surface_uniform(p, spec.n_canonical, rng) for p in shapes])
    # one local sample per shape, so parts sharing a shape get congruent blocks
    local = [sq_sample_surface_uniform(p, spec.points_per_part, rng) for p in shapes]
    blocks, labels = [], []
    for m, (i, T) in enumerate(parts):
        blocks.append(pose_apply(T, local[i]))
        labels.append(np.full(spec.points_per_part, m))
    X = np.concatenate(blocks)
    if spec.noise_sigma > 0:
        X = X + rng.normal(0.0, spec.noise_sigma, X.shape)
    logits = np.zeros((M_s, M_T))
    for m, (i, _) in enumerate(parts):
        logits[i, m] = 5.0
    truth = PartsModel.from_parts(shapes, canon, [T for _, T in parts], logits)
    return X, np.concatenate(labels), truth


def truth_loss(X, truth: PartsModel, weights: LossWeights):
    """Stage-2 objective evaluated at the generating model."""
    return stage2_objective(X, truth, weights)

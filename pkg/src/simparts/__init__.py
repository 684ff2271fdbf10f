"""Point-cloud part abstraction with shared canonical shapes.

An object is explained by M_T posed parts drawn from M_s <= M_T canonical
shapes (a superquadric plus a point set each); a discrete assignment, learned
through a straight-through Gumbel estimator, says which shape each part uses.
"""
from .geometry import (DegenerateRotationError, Pose, Superquadric, pose_apply,
                       pose_inverse_apply, quat_to_rotation, sq_implicit, sq_indicator,
                       sq_radial_distance, sq_sample_surface, sq_surface_point)
from .spa import (AssignmentMatrix, assignment_loss, gumbel_from_uniform, hard_assignment,
                  sample_gumbel, select_shapes, soft_assignment, straight_through_select)
from .model import PartsModel, assemble, freeze_assignment, part_canonical_points
from .losses import (LossContext, LossWeights, PRESETS, chamfer, diversity_loss,
                     finite_diff_check, overlap_loss, partition_by_primitive, points_loss,
                     preset, prim_points_loss, stage1_objective, stage2_objective)
from .fit import FitConfig, FitDivergedError, FitResult, fit, init_model, refine
from .complete import Corruption, completion_r, completion_s, corrupt_cut, corrupt_hole
from .metrics import (balanced_resample, cov, emd, jsd, mmd, part_point_stats,
                      self_similarity)
from .synth import SynthSpec, Template, generate, truth_loss

__version__ = "0.1.0"

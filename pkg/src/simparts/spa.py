"""Similar-parts assignment: Gumbel noise, soft/hard assignment matrices and
straight-through shape selection.

Assignment matrices are M_s x M_T (shapes x parts); column j says which
shape part j uses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U_CLAMP = 1e-12


def sample_gumbel(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.random((rows, cols)), _U_CLAMP, 1 - _U_CLAMP)
    return gumbel_from_uniform(u)


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=float), _U_CLAMP, 1 - _U_CLAMP)
    return -np.log(-np.log(u))


def soft_assignment(logits, g, tau: float = 1.0) -> np.ndarray:
    """Column-wise softmax((logits + g) / tau)."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    v = (np.asarray(logits, dtype=float) + g) / tau
    v = v - v.max(axis=0, keepdims=True)
    e = np.exp(v)
    return e / e.sum(axis=0, keepdims=True)


def hard_assignment(logits, g=0.0) -> np.ndarray:
    """One-hot columns at argmax(logits + g); ties go to the lowest shape index."""
    v = np.asarray(logits, dtype=float) + g
    hot = np.argmax(v, axis=0)  # argmax returns the first maximum
    A = np.zeros_like(v)
    A[hot, np.arange(v.shape[1])] = 1.0
    return A


@dataclass
class AssignmentMatrix:
    """Hard one-hot assignment plus the soft matrix used for its gradient."""

    hard: np.ndarray
    soft: np.ndarray
    tau: float = 1.0
    noise: np.ndarray | None = None

    @classmethod
    def draw(cls, logits, g=None, tau: float = 1.0) -> "AssignmentMatrix":
        logits = np.asarray(logits, dtype=float)
        if g is None:
            g = np.zeros_like(logits)
        return cls(hard_assignment(logits, g), soft_assignment(logits, g, tau), tau, g)

    @property
    def hot(self) -> np.ndarray:
        """Shape index used by each part."""
        return np.argmax(self.hard, axis=0)

    @property
    def shape(self):
        return self.hard.shape

    def logits_grad(self, d_selection: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. the selection matrix back to the logits.

        This is the straight-through rule: the gradient is that of the soft
        matrix, whatever matrix was used in the forward pass.
        """
        S = self.soft
        inner = (d_selection * S).sum(axis=0, keepdims=True)
        return S * (d_selection - inner) / self.tau


def straight_through_select(values, A: AssignmentMatrix, selection=None):
    """Pick ``values[hot(j)]`` for every part j.

    ``values`` has the shape index first.  Returns the per-part stack and a
    vjp closure ``grad_out -> (grad_values, grad_logits)``.  ``selection``
    overrides the forward matrix (defaults to ``A.hard``); gradient checks
    use it to move along the soft path.
    """
    values = np.asarray(values, dtype=float)
    W = A.hard if selection is None else selection
    out = np.tensordot(W, values, axes=([0], [0]))

    def vjp(grad_out):
        grad_values = np.tensordot(W, grad_out, axes=([1], [0]))
        dW = np.tensordot(values.reshape(len(values), -1),
                          grad_out.reshape(len(grad_out), -1), axes=([1], [1]))
        return grad_values, A.logits_grad(dW)

    return out, vjp


def select_shapes(canonical, A) -> np.ndarray:
    """3-mode product of an (N_p, 3, M_s) stack with A^T -> (N_p, 3, M_T)."""
    canonical = np.asarray(canonical, dtype=float)
    W = A.hard if isinstance(A, AssignmentMatrix) else np.asarray(A, dtype=float)
    if canonical.ndim != 3 or canonical.shape[2] != W.shape[0]:
        raise ValueError(
            f"stack with {canonical.shape[-1]} shapes does not match "
            f"assignment with {W.shape[0]} rows")
    return np.einsum("pci,ij->pcj", canonical, W)


def assignment_loss(A) -> float:
    """Hinge penalty on shapes that no part uses."""
    return assignment_loss_grad(A)[0]


def assignment_loss_grad(A):
    """Value and gradient w.r.t. the (possibly relaxed) assignment matrix."""
    W = A.hard if isinstance(A, AssignmentMatrix) else np.asarray(A, dtype=float)
    M_s = W.shape[0]
    slack = 1.0 - W.sum(axis=1)
    value = np.maximum(slack, 0.0).sum() / M_s
    grad = np.where(slack > 0, -1.0 / M_s, 0.0)[:, None] * np.ones_like(W)
    return float(value), grad

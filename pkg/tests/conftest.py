import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_model(rng, M_s=2, M_T=4, N_p=10, hot=None):
    """Random PartsModel; hot fixes the noise-free assignment."""
    from simparts.model import PartsModel
    logits = rng.normal(0.0, 0.3, (M_s, M_T))
    if hot is not None:
        logits[np.asarray(hot), np.arange(M_T)] += 3.0
    quat = rng.normal(size=(M_T, 4))
    return PartsModel(alpha=rng.uniform(0.3, 0.8, (M_s, 3)), eps=rng.uniform(0.5, 1.5, (M_s, 2)),
                      taper=rng.uniform(-0.3, 0.3, (M_s, 2)),
                      points=rng.normal(0.0, 0.4, (M_s, N_p, 3)),
                      quat=quat / np.linalg.norm(quat, axis=1, keepdims=True),
                      trans=rng.normal(0.0, 0.5, (M_T, 3)), logits=logits)


def random_config(rng, n_x=30, N_p=10):
    """(X, model, A) away from kinks: Gumbel-hard row sums are never exactly 1."""
    from simparts.spa import AssignmentMatrix, sample_gumbel
    while True:
        model = random_model(rng, N_p=N_p)
        A = AssignmentMatrix.draw(model.logits, sample_gumbel(model.M_s, model.M_T, rng))
        if not np.any(A.hard.sum(axis=1) == 1):
            break
    X = rng.normal(0.0, 0.7, (n_x, 3))
    return X, model, A


def fd_errors(evaluate, X, model, A, n_surface=8):
    """Per-block relative FD errors of evaluate(X, model, A=, ctx=, selection=, grad=)."""
    from simparts.losses import LossContext, finite_diff_check, frozen_objective, param_blocks
    ctx = LossContext(X, n_surface, np.random.default_rng(0))
    f, x0 = frozen_objective(evaluate, X, model, A, ctx)
    return finite_diff_check(f, x0, h=1e-5, blocks=param_blocks(model))

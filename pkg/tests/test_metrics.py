import itertools
import logging
import math

import numpy as np
import pytest
from conftest import random_model
from hypothesis import given
from hypothesis import strategies as st

from simparts.geometry import Pose, Superquadric
from simparts.losses import chamfer
from simparts.metrics import (balanced_resample, counts_sdev, cov, emd, jsd, mmd, part_point_stats,
                              self_similarity)
from simparts.model import PartsModel


def _brute_emd(X, Y):
    n = len(X)
    return min(sum(math.dist(X[i], Y[p[i]]) for i in range(n)) / n
               for p in itertools.permutations(range(n)))


def _brute_cd(X, Y):
    fwd = sum(min(sum((a - b) ** 2 for a, b in zip(x, y)) for y in Y) for x in X) / len(X)
    bwd = sum(min(sum((a - b) ** 2 for a, b in zip(x, y)) for x in X) for y in Y) / len(Y)
    return fwd + bwd


def _clouds(r, k, n=5):
    return [r.normal(0, 0.2, (n, 3)) for _ in range(k)]


# EMD ------------------------------------------------------------------------------

def test_emd_examples(rng):
    X = rng.normal(size=(6, 3))
    assert emd(X, X) == 0.0
    assert emd([[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [2, 0, 0]]) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        emd(X, X[:5])
    with pytest.raises(ValueError):
        emd(np.zeros((513, 3)), np.zeros((513, 3)))


@given(st.integers(0, 10 ** 6), st.integers(1, 7))
def test_emd_matches_permutation_search(seed, n):
    r = np.random.default_rng(seed)
    X, Y = r.normal(size=(n, 3)), r.normal(size=(n, 3))
    e = emd(X, Y)
    assert e == pytest.approx(_brute_emd(X, Y), abs=1e-10)
    assert e == pytest.approx(emd(Y, X), abs=1e-12) and e >= 0


# MMD / COV ----------------------------------------------------------------------

def test_mmd_cov_examples(rng):
    X_set = _clouds(rng, 3)
    assert mmd(X_set, X_set + _clouds(rng, 2)) == 0.0
    assert mmd(X_set[:1], X_set[1:2]) == pytest.approx(chamfer(X_set[0], X_set[1]), abs=1e-15)
    assert cov(X_set, X_set) == 1.0
    assert cov(X_set[:2], X_set[2:3]) == 0.5


@given(st.integers(0, 10 ** 6), st.integers(1, 4), st.integers(1, 4), st.sampled_from(["cd", "emd"]))
def test_mmd_cov_match_brute_force(seed, m, k, d):
    r = np.random.default_rng(seed)
    X_set, Y_set = _clouds(r, m), _clouds(r, k)
    dist = _brute_cd if d == "cd" else _brute_emd
    table = [[dist(x, y) for y in Y_set] for x in X_set]
    assert mmd(X_set, Y_set, d) == pytest.approx(sum(min(row) for row in table) / m, abs=1e-10)
    covered = {min(range(m), key=lambda j: (table[j][i], j)) for i in range(k)}
    c = cov(X_set, Y_set, d)
    assert c == pytest.approx(len(covered) / m, abs=1e-12)
    assert (c * m) == pytest.approx(round(c * m))


def test_distance_name_errors(rng):
    with pytest.raises(ValueError):
        mmd(_clouds(rng, 1), _clouds(rng, 1), "hausdorff")
    with pytest.raises(ValueError):
        mmd([], _clouds(rng, 1))


# JSD ------------------------------------------------------------------------------

def _hist(clouds, res, lo=-0.5, hi=0.5):
    h = {}
    for c in clouds:
        for p in c:
            key = tuple(min(max(int(math.floor((v - lo) / (hi - lo) * res)), 0), res - 1) for v in p)
            h[key] = h.get(key, 0) + 1
    n = sum(h.values())
    return {k: v / n for k, v in h.items()}


def _brute_jsd(A, B, res):
    p, q = _hist(A, res), _hist(B, res)
    out = 0.0
    for k in set(p) | set(q):
        a, b = p.get(k, 0.0), q.get(k, 0.0)
        m = (a + b) / 2
        out += 0.5 * (a * math.log(a / m) if a else 0) + 0.5 * (b * math.log(b / m) if b else 0)
    return out


def test_jsd_examples(rng):
    A = _clouds(rng, 3)
    assert jsd(A, A) == 0.0
    assert jsd([[[0.1, 0.1, 0.1]]], [[[-0.3, -0.3, -0.3]]]) == pytest.approx(math.log(2), abs=1e-12)


@given(st.integers(0, 10 ** 6), st.integers(1, 4), st.integers(1, 4), st.sampled_from([2, 5, 28]))
def test_jsd_matches_histogram_oracle(seed, m, k, res):
    r = np.random.default_rng(seed)
    A, B = _clouds(r, m), _clouds(r, k)
    v = jsd(A, B, grid_res=res)
    assert v == pytest.approx(_brute_jsd(A, B, res), abs=1e-10)
    assert v == pytest.approx(jsd(B, A, grid_res=res), abs=1e-12)
    assert 0 <= v <= math.log(2) + 1e-12


def test_jsd_clamps_and_reports_outside_points(caplog):
    with caplog.at_level(logging.WARNING):
        v = jsd([[[5.0, 0, 0]]], [[[0.49, 0.0, 0.0]]], grid_res=4)
    assert v == pytest.approx(0.0, abs=1e-15)
    assert "outside" in caplog.text


# self-similarity and part statistics ------------------------------------------------

def test_self_similarity(rng):
    shared = random_model(rng, M_s=2, M_T=3, hot=[0, 1, 1])
    assert self_similarity(shared)[1] == 0.0
    distinct = random_model(rng, M_s=3, M_T=3, hot=[0, 1, 2])
    P = distinct.points
    pairs = [chamfer(P[0], P[1]), chamfer(P[0], P[2]), chamfer(P[1], P[2])]
    mean, lo = self_similarity(distinct)
    assert lo > 0
    assert mean == pytest.approx(sum(pairs) / 3, rel=1e-12) and lo == min(pairs)


def test_counts_sdev_reference_rows():
    assert counts_sdev([974, 569, 505]) == pytest.approx(208, abs=0.5)
    assert counts_sdev([512] * 4) == 0.0


def test_part_point_stats_balanced():
    s = Superquadric.sphere(0.5)
    model = PartsModel.from_parts([s], np.zeros((1, 4, 3)),
                                  [Pose(t=[0, 0, 0]), Pose(t=[5, 0, 0])], np.zeros((1, 2)))
    X = np.array([[0.1, 0, 0], [-0.1, 0, 0], [5.1, 0, 0], [4.9, 0, 0]])
    stats = part_point_stats(X, model)
    assert list(stats.counts) == [2, 2] and stats.sdev == 0.0


def test_balanced_resample(rng):
    model = random_model(rng, M_s=1, M_T=3, N_p=1024)
    pts, part = balanced_resample(model, [1024, 512, 512], np.random.default_rng(3), n_total=2048)
    assert list(np.bincount(part)) == [1024, 512, 512] and len(pts) == 2048
    again = balanced_resample(model, [1024, 512, 512], np.random.default_rng(3), n_total=2048)
    assert np.array_equal(again[0], pts)
    pts, part = balanced_resample(model, [7, 7, 7], rng, n_total=300)
    assert list(np.bincount(part)) == [100, 100, 100]
    _, part = balanced_resample(model, [3, 1, 0], rng, n_total=4096)
    assert list(np.bincount(part, minlength=3)) == [1024, 1024, 0]   # capped at N_p

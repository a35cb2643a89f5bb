import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secmarket.errors import ConstraintError, DimensionError
from secmarket.krum import (
    admissible,
    byzantine_count,
    default_m,
    m_krum,
    m_krum_detailed,
    max_admissible_m,
    neighbor_count,
    score_one,
)

from oracles import naive_m_krum

MUS = [0.0, 0.1, 0.125, 0.2, 0.25, 0.3]


def random_instance(rng):
    while True:
        p = int(rng.integers(4, 9))
        mu = float(rng.choice(MUS))
        top = max_admissible_m(mu, p)
        if top >= 1:
            break
    m = int(rng.integers(1, top + 1))
    dim = int(rng.integers(1, 17))
    scale = 10.0 ** rng.integers(-2, 3)
    # a few exact duplicates exercise the tie rule
    cands = {r: rng.normal(scale=scale, size=dim) for r in range(1, p + 1)}
    if rng.random() < 0.3:
        a, b = rng.choice(list(cands), 2, replace=False)
        cands[int(b)] = cands[int(a)].copy()
    return cands, mu, m


def test_matches_naive_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        cands, mu, m = random_instance(rng)
        assert m_krum(cands, mu, m) == naive_m_krum({r: list(v) for r, v in cands.items()}, mu, m)


def test_hand_checked_score():
    cands = {1: [0.0], 2: [1.0], 3: [2.0], 4: [10.0]}
    assert neighbor_count(4, 0.0, 4) == 2
    assert score_one(2, [1, 2, 3, 4], cands, 0.0, 4).score == 2.0


def test_identical_neighbors_contribute_zero():
    cands = {1: [3.0, 3.0], 2: [3.0, 3.0], 3: [3.0, 3.0], 4: [9.0, 9.0]}
    assert score_one(1, [1, 2, 3, 4], cands, 0.0, 4).score == 0.0


def test_candidate_is_not_its_own_neighbor():
    # with itself counted, round 4's nearest neighbor would be distance 0
    cands = {1: [0.0], 2: [0.0], 3: [0.0], 4: [5.0]}
    assert score_one(4, [1, 2, 3, 4], cands, 0.0, 4).score == 50.0


def test_identical_candidates_pick_lowest_indices():
    cands = {r: np.ones(3) for r in (7, 2, 5, 9, 4, 8, 3, 6)}
    assert m_krum(cands, 0.0, 5) == [2, 3, 4, 5, 6]


def test_planted_outlier_excluded():
    rng = np.random.default_rng(1)
    cands = {r: rng.normal(scale=0.1, size=5) for r in range(1, 8)}
    cands[8] = np.full(5, 1e3 / np.sqrt(5))
    assert m_krum(cands, 0.25, 1) != [8]


def test_planted_outliers_never_selected():
    rng = np.random.default_rng(99)
    for _ in range(100):
        p = int(rng.integers(5, 9))
        mu = float(rng.choice([0.0, 0.1, 0.125, 0.2, 0.25]))
        if max_admissible_m(mu, p) < 1:
            mu = 0.0
        m = int(rng.integers(1, max_admissible_m(mu, p) + 1))
        k = int(rng.integers(0, byzantine_count(mu, p) + 1))
        dim = int(rng.integers(1, 17))
        honest = rng.uniform(-1, 1, size=(p - k, dim))
        diam = max(np.linalg.norm(a - b) for a in honest for b in honest) or 1.0
        planted = []
        for _ in range(k):
            u = rng.normal(size=dim)
            planted.append(honest.mean(0) + u / np.linalg.norm(u) * diam * float(rng.uniform(10, 100)))
        labels = rng.permutation(np.arange(1, p + 1))
        vecs = list(honest) + planted
        cands = {int(lbl): v for lbl, v in zip(labels, vecs)}
        bad = {int(lbl) for lbl in labels[p - k:]}
        assert not bad & set(m_krum(cands, mu, m))


@given(st.integers(0, 2**32), st.floats(-1e3, 1e3))
@settings(max_examples=40, deadline=None)
def test_translation_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    cands = {r: rng.normal(size=4) for r in range(1, 9)}
    moved = {r: v + shift for r, v in cands.items()}
    assert m_krum(cands, 0.125, 2) == m_krum(moved, 0.125, 2)


@given(st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    cands = {r: rng.normal(size=6) for r in range(1, 9)}
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert m_krum(cands, 0.0, 3) == m_krum({r: q @ v for r, v in cands.items()}, 0.0, 3)


@given(st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_label_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    cands = {r: rng.normal(size=3) for r in range(1, 8)}
    perm = dict(zip(range(1, 8), (int(v) for v in rng.permutation(np.arange(11, 18)))))
    relabeled = {perm[r]: v for r, v in cands.items()}
    assert [perm[r] for r in m_krum(cands, 0.0, 2)] == m_krum(relabeled, 0.0, 2)


def test_constraint_arithmetic():
    assert neighbor_count(8, 0.25, 8) == 4
    assert admissible(1, 0.25, 8) and not admissible(2, 0.25, 8)
    assert admissible(5, 0.0, 8) and not admissible(6, 0.0, 8)
    assert max_admissible_m(0.25, 8) == 1
    assert max_admissible_m(0.0, 8) == 5
    assert max_admissible_m(0.25, 4) == 0
    assert default_m(0.25, 8) == 1
    # 0.3 * 10 is 3.0000000000000004 in floats; exact floor is 3
    assert byzantine_count(0.3, 10) == 3


def test_distance_terms_count_full_square():
    cands = {r: np.zeros(5) for r in range(1, 9)}
    res = m_krum_detailed(cands, 0.0, 2)
    assert res.distance_terms == (8**2 + 7**2) * 5
    assert len(res.scores) == 2 and len(res.scores[1]) == 7


def test_errors():
    cands = {r: np.zeros(2) for r in range(1, 9)}
    with pytest.raises(ConstraintError):
        m_krum(cands, 0.25, 2)
    with pytest.raises(ConstraintError):
        m_krum(cands, 0.0, 0)
    with pytest.raises(ConstraintError):
        score_one(1, [1, 2], cands, 0.0, 8)
    with pytest.raises(ConstraintError):
        score_one(3, [1, 2], cands, 0.0, 2)
    cands[4] = np.zeros(3)
    with pytest.raises(DimensionError):
        m_krum(cands, 0.0, 1)

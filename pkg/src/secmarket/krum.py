"""m-Krum selection over decoded round aggregates.

Each of ``m`` iterations scores every remaining candidate by the sum of
squared l2 distances to its ``|T| - floor(mu*|P|) - 2`` nearest other
candidates and moves the lowest scorer into the selected set.  Ties (both
among distances and among scores) go to the lower round index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import kernels
from .errors import ConstraintError, DimensionError


def _exact(mu: float) -> Fraction:
    return Fraction(repr(float(mu)))


def byzantine_count(mu: float, p_size: int) -> int:
    """floor(mu * |P|), evaluated exactly on the decimal value of mu."""
    return math.floor(_exact(mu) * p_size)


def neighbor_count(t_size: int, mu: float, p_size: int) -> int:
    return t_size - byzantine_count(mu, p_size) - 2


def admissible(m: int, mu: float, p_size: int) -> bool:
    """True when 1 <= m < (1 - 2 mu) |P| - 2."""
    return m >= 1 and m < (1 - 2 * _exact(mu)) * p_size - 2


def max_admissible_m(mu: float, p_size: int) -> int:
    """Largest m satisfying :func:`admissible`, or 0 if none does."""
    bound = (1 - 2 * _exact(mu)) * p_size - 2
    m = math.ceil(bound) - 1
    return max(m, 0)


def default_m(mu: float, p_size: int) -> int:
    return max(1, math.floor((1 - 2 * _exact(mu)) * p_size) - 3)


@dataclass(frozen=True)
class KrumScore:
    round: int
    score: float


@dataclass
class KrumResult:
    selected: list[int]
    scores: list[list[KrumScore]] = field(default_factory=list)
    distance_terms: int = 0


def _stack(candidates: Mapping[int, np.ndarray]) -> tuple[list[int], np.ndarray]:
    labels = sorted(candidates)
    vecs = [np.asarray(candidates[r], dtype=np.float64).ravel() for r in labels]
    dims = {v.shape[0] for v in vecs}
    if len(dims) > 1:
        raise DimensionError(f"candidate dimensions differ: {sorted(dims)}")
    return labels, np.vstack(vecs) if vecs else np.zeros((0, 0))


def _score_from_row(r_pos: int, t_pos: list[int], labels: list[int], row: np.ndarray, k: int) -> float:
    others = sorted(
        ((row[j], labels[p]) for j, p in enumerate(t_pos) if p != r_pos),
    )
    acc = math.fsum(d for d, _ in others[:k])
    return acc


def score_one(r: int, T, candidates: Mapping[int, np.ndarray], mu: float, p_size: int) -> KrumScore:
    """Krum score of round ``r`` against the other members of ``T``."""
    T = sorted(T)
    if r not in T:
        raise ConstraintError(f"round {r} is not a remaining candidate")
    k = neighbor_count(len(T), mu, p_size)
    if k < 1:
        raise ConstraintError(f"neighbor count {k} < 1 for |T|={len(T)}, mu={mu}, |P|={p_size}")
    labels, X = _stack({t: candidates[t] for t in T})
    pos = labels.index(r)
    row = kernels.sq_dist_rows(X, np.array([pos], dtype=np.int64), np.arange(len(labels), dtype=np.int64))[0]
    return KrumScore(r, _score_from_row(pos, list(range(len(labels))), labels, row, k))


def m_krum_detailed(candidates: Mapping[int, np.ndarray], mu: float, m: int, p_size: int | None = None) -> KrumResult:
    """Run m-Krum and also report per-iteration scores and metered work.

    ``distance_terms`` counts squared-difference terms: every iteration
    measures each remaining candidate against every member of ``T``,
    i.e. ``|T|^2 * dim`` terms.
    """
    if p_size is None:
        p_size = len(candidates)
    if m < 1:
        raise ConstraintError(f"m must be >= 1, got {m}")
    if not admissible(m, mu, p_size):
        raise ConstraintError(
            f"m={m} violates m < (1 - 2*{mu})*{p_size} - 2 "
            f"(largest admissible m is {max_admissible_m(mu, p_size)})"
        )
    labels, X = _stack(candidates)
    if len(labels) < m:
        raise ConstraintError(f"cannot select {m} of {len(labels)} candidates")
    dim = X.shape[1] if X.ndim == 2 else 0
    remaining = list(range(len(labels)))
    result = KrumResult(selected=[])
    for _ in range(m):
        k = neighbor_count(len(remaining), mu, p_size)
        if k < 1:
            raise ConstraintError(f"neighbor count {k} < 1 with |T|={len(remaining)}")
        idx = np.array(remaining, dtype=np.int64)
        dist = kernels.sq_dist_rows(X, idx, idx)
        result.distance_terms += len(remaining) ** 2 * dim
        scores = [
            KrumScore(labels[p], _score_from_row(p, remaining, labels, dist[a], k))
            for a, p in enumerate(remaining)
        ]
        result.scores.append(scores)
        best = min(range(len(scores)), key=lambda a: (scores[a].score, scores[a].round))
        result.selected.append(scores[best].round)
        del remaining[best]
    return result


def m_krum(candidates: Mapping[int, np.ndarray], mu: float, m: int, p_size: int | None = None) -> list[int]:
    """Selected round indices, in selection order."""
    return m_krum_detailed(candidates, mu, m, p_size).selected

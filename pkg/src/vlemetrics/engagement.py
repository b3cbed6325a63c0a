"""Engagement scoring: immediacy/diversity/frequency, scaling, and the metric.

Raw scores per student and chapter come from the session aggregates;
min-max scalers fitted on training students map each score to a 0-1
scale (out-of-sample values may leave that range); the per-chapter sums
are combined by chapter weights into the metric, which a power
transform then symmetrizes for modeling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    NoAccess,
    NonPositiveAfterShift,
    NotFitted,
    WeightMismatch,
)
from .sessions import ChapterAggregate

SCORE_NAMES = ("immediacy", "diversity", "frequency")


def release_dates(aggregates: Iterable[ChapterAggregate],
                  chapters: Sequence[int]) -> dict[int, int]:
    """Per chapter, the earliest session day over one cohort-year's students."""
    earliest: dict[int, int] = {}
    for agg in aggregates:
        if agg.session_count == 0:
            continue
        day = agg.earliest_day
        if agg.chapter not in earliest or day < earliest[agg.chapter]:
            earliest[agg.chapter] = day
    for chapter in chapters:
        if chapter not in earliest:
            raise NoAccess(chapter)
    return {chapter: earliest[chapter] for chapter in chapters}


def raw_scores(agg: ChapterAggregate, release_day: int,
               module_end_day: int) -> tuple[int, int, int]:
    """(immediacy, diversity, frequency) for one student x chapter.

    A student with no sessions gets the maximal delay and zero
    diversity/frequency.
    """
    if release_day > module_end_day:
        raise ValueError("release_day must not exceed module_end_day")
    if agg.session_count == 0:
        return release_day - module_end_day, 0, 0
    immediacy = release_day - agg.earliest_day
    diversity = int(agg.activity_vector.sum())
    return immediacy, diversity, agg.session_count


@dataclass
class RawScoreTable:
    """Raw per-chapter scores for a set of students, as (n, K) arrays."""

    user_ids: list[str]
    chapters: list[int]
    immediacy: np.ndarray
    diversity: np.ndarray
    frequency: np.ndarray

    def score(self, name: str) -> np.ndarray:
        return getattr(self, name)


class ChapterScaler:
    """Min-max scalers per chapter per score, fitted on training rows only.

    A constant training column (max == min) maps every value to 0.
    """

    def __init__(self):
        self._min: Optional[dict[str, np.ndarray]] = None
        self._max: Optional[dict[str, np.ndarray]] = None

    def fit(self, scores: RawScoreTable, rows: Optional[np.ndarray] = None) -> "ChapterScaler":
        self._min, self._max = {}, {}
        for name in SCORE_NAMES:
            block = scores.score(name)
            if rows is not None:
                block = block[rows]
            self._min[name] = block.min(axis=0).astype(float)
            self._max[name] = block.max(axis=0).astype(float)
        return self

    def apply(self, scores: RawScoreTable, rows: Optional[np.ndarray] = None) -> dict[str, np.ndarray]:
        if self._min is None:
            raise NotFitted("ChapterScaler.apply before fit")
        out = {}
        for name in SCORE_NAMES:
            block = scores.score(name).astype(float)
            if rows is not None:
                block = block[rows]
            lo, hi = self._min[name], self._max[name]
            span = hi - lo
            scaled = np.zeros_like(block)
            ok = span > 0
            scaled[:, ok] = (block[:, ok] - lo[ok]) / span[ok]
            out[name] = scaled
        return out


def idf_scores(scaled: Mapping[str, np.ndarray]) -> np.ndarray:
    """Per-chapter sum of the three scaled scores, shape (n, K)."""
    return scaled["immediacy"] + scaled["diversity"] + scaled["frequency"]


def engagement_metric(scaled: Mapping[str, np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Chapter-weighted sum of the per-chapter score sums."""
    idf = idf_scores(scaled)
    w = np.asarray(weights, dtype=float)
    if w.shape != (idf.shape[1],):
        raise WeightMismatch(f"{len(w)} weights for {idf.shape[1]} chapters")
    if np.any(w < 0):
        raise WeightMismatch("chapter weights must be non-negative")
    return idf @ w


@dataclass(frozen=True)
class BoxCoxParams:
    lam: float
    shift: float


def boxcox_transform(y: np.ndarray, lam: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise NonPositiveAfterShift("power transform requires positive values")
    if lam == 0.0:
        return np.log(y)
    return (np.power(y, lam) - 1.0) / lam


def boxcox_loglik(y: np.ndarray, lam: float) -> float:
    """Profile log-likelihood (MLE variance form, with the Jacobian term)."""
    z = boxcox_transform(y, lam)
    n = len(z)
    var = float(np.mean((z - z.mean()) ** 2))
    if var <= 0:
        return -np.inf
    return -0.5 * n * np.log(var) + (lam - 1.0) * float(np.sum(np.log(y)))


def boxcox_fit(y_train: Sequence[float], lam_grid: Sequence[float],
               eps: float = 0.5) -> BoxCoxParams:
    """Pick the grid lambda maximizing the profile log-likelihood of y + shift."""
    grid = np.asarray(lam_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid must be non-empty")
    if eps <= 0:
        raise NonPositiveAfterShift(f"eps must be positive, got {eps}")
    y = np.asarray(y_train, dtype=float)
    shift = max(0.0, eps - float(y.min()))
    shifted = y + shift
    if np.any(shifted <= 0):
        raise NonPositiveAfterShift("training values non-positive after shift")
    lls = np.array([boxcox_loglik(shifted, lam) for lam in grid])
    return BoxCoxParams(lam=float(grid[int(np.argmax(lls))]), shift=shift)


def boxcox_apply(y: np.ndarray | float, params: BoxCoxParams) -> np.ndarray:
    scalar = np.isscalar(y)
    z = boxcox_transform(np.atleast_1d(np.asarray(y, dtype=float)) + params.shift, params.lam)
    return float(z[0]) if scalar else z

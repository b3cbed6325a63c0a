"""Weekly interaction predictors: counts, proportional views, filtering, scaling.

Rows are students, columns are (resource, week) pairs over the module
week range plus the categorical delivery method, which is carried
alongside the continuous block and never standardized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import AllColumnsDropped, NotFitted
from .ingest import ClassifiedRecord

COUNTED_RESOURCES = ("clicks", "lecture_note", "video", "quiz")


@dataclass(frozen=True)
class FeatureColumn:
    resource: str
    week: int

    @property
    def name(self) -> str:
        return f"{self.resource}_w{self.week}"


@dataclass
class FeatureMatrix:
    """Raw (or video-adjusted) weekly counts plus the delivery method."""

    user_ids: list[str]
    cohorts: list[str]
    delivery: np.ndarray  # int codes 1/2/3, never scaled
    values: np.ndarray  # (n, p) float
    columns: list[FeatureColumn]

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column_index(self) -> dict[str, int]:
        return {c.name: j for j, c in enumerate(self.columns)}


def weekly_counts(records: Iterable[ClassifiedRecord],
                  user_ids: Sequence[str],
                  cohort_of_user: Mapping[str, str],
                  delivery_of_user: Mapping[str, int],
                  weeks: Sequence[int],
                  resources: Sequence[str] = COUNTED_RESOURCES) -> FeatureMatrix:
    """Count logs per student, resource, and week.

    ``clicks`` counts every log; the other resources count records
    classified to that kind. Students or weeks with no records count 0.
    """
    weeks = list(weeks)
    week_pos = {w: t for t, w in enumerate(weeks)}
    row_pos = {u: i for i, u in enumerate(user_ids)}
    counts = {r: np.zeros((len(user_ids), len(weeks)), dtype=np.int64) for r in resources}
    for rec in records:
        i = row_pos.get(rec.user_id)
        t = week_pos.get(rec.week)
        if i is None or t is None:
            continue
        if "clicks" in counts:
            counts["clicks"][i, t] += 1
        if rec.resource_kind in counts:
            counts[rec.resource_kind][i, t] += 1
    columns = [FeatureColumn(r, w) for r in resources for w in weeks]
    values = np.concatenate([counts[r] for r in resources], axis=1).astype(float)
    return FeatureMatrix(
        user_ids=list(user_ids),
        cohorts=[cohort_of_user[u] for u in user_ids],
        delivery=np.array([delivery_of_user[u] for u in user_ids], dtype=np.int64),
        values=values,
        columns=columns,
    )


def proportional_video(matrix: FeatureMatrix, video_counts: Mapping[str, int]) -> FeatureMatrix:
    """Divide each student's video columns by their cohort's video count."""
    denom = np.array([video_counts[c] for c in matrix.cohorts], dtype=float)
    if np.any(denom < 1):
        raise ValueError("video counts must be >= 1")
    values = matrix.values.copy()
    for j, col in enumerate(matrix.columns):
        if col.resource == "video":
            values[:, j] = values[:, j] / denom
    return FeatureMatrix(matrix.user_ids, matrix.cohorts, matrix.delivery,
                         values, list(matrix.columns))


def sparsity_mask(values: np.ndarray, min_nonzero_fraction: float = 0.01) -> np.ndarray:
    """Columns to retain: non-zero fraction at or above the threshold."""
    if values.shape[0] == 0:
        raise ValueError("cannot compute sparsity on an empty matrix")
    frac = np.count_nonzero(values, axis=0) / values.shape[0]
    mask = frac >= min_nonzero_fraction
    if not mask.any():
        raise AllColumnsDropped("every continuous column fell below the sparsity threshold")
    return mask


@dataclass
class StandardizerState:
    """Train-fitted per-column mean/sd; zero-variance columns are dropped."""

    mean: np.ndarray
    sd: np.ndarray
    kept: np.ndarray  # bool mask over the columns the fit saw


def standardize_fit(values: np.ndarray) -> StandardizerState:
    mean = values.mean(axis=0)
    sd = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros(values.shape[1])
    kept = sd > 0
    if not kept.any():
        raise AllColumnsDropped("every column has zero training variance")
    return StandardizerState(mean=mean[kept], sd=sd[kept], kept=kept)


def standardize_apply(values: np.ndarray, state: Optional[StandardizerState]) -> np.ndarray:
    if state is None:
        raise NotFitted("standardize_apply before fit")
    return (values[:, state.kept] - state.mean) / state.sd

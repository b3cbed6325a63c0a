"""Per-fold transform pipeline from raw scores and counts to model inputs.

All train-fitted state (score scalers, the response transform, the
sparsity mask, the standardizer) is learned from the rows passed to
``fit`` and nothing else, so cross-validation folds stay leak-free by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engagement import (
    BoxCoxParams,
    ChapterScaler,
    RawScoreTable,
    boxcox_fit,
    boxcox_transform,
    engagement_metric,
)
from .features import FeatureColumn, sparsity_mask, standardize_fit
from .models import DesignMatrix


@dataclass
class StudentDataset:
    """Pooled per-student raw scores and raw weekly counts across cohorts."""

    user_ids: list[str]
    cohorts: list[str]
    delivery: np.ndarray
    chapters: list[int]
    chapter_weights: np.ndarray
    scores: RawScoreTable
    feature_values: np.ndarray  # (n, p) raw counts, video-adjusted
    feature_columns: list[FeatureColumn]

    @property
    def n(self) -> int:
        return len(self.user_ids)

    def mutated_except(self, keep_rows: np.ndarray, fill: float = 1e6) -> "StudentDataset":
        """Copy with every row outside ``keep_rows`` overwritten by garbage.

        Supports the leakage check: state fitted on ``keep_rows`` must be
        unaffected by what the other rows contain.
        """
        keep = np.zeros(self.n, dtype=bool)
        keep[keep_rows] = True
        def smash(a):
            out = np.array(a, dtype=float, copy=True)
            out[~keep] = fill
            return out
        scores = RawScoreTable(
            user_ids=list(self.scores.user_ids),
            chapters=list(self.scores.chapters),
            immediacy=smash(self.scores.immediacy),
            diversity=smash(self.scores.diversity),
            frequency=smash(self.scores.frequency),
        )
        return StudentDataset(
            user_ids=list(self.user_ids),
            cohorts=list(self.cohorts),
            delivery=self.delivery.copy(),
            chapters=list(self.chapters),
            chapter_weights=self.chapter_weights.copy(),
            scores=scores,
            feature_values=smash(self.feature_values),
            feature_columns=list(self.feature_columns),
        )


@dataclass
class FoldState:
    """Everything fitted on one training split."""

    scaler: ChapterScaler
    boxcox: BoxCoxParams
    retained: np.ndarray  # bool over raw feature columns
    mean: np.ndarray  # per retained column
    sd: np.ndarray
    column_names: tuple[str, ...]


@dataclass
class FoldPipeline:
    """Fits and applies the whole transform stack for one dataset."""

    dataset: StudentDataset
    boxcox_grid: np.ndarray = field(
        default_factory=lambda: np.round(np.arange(-2.0, 2.0 + 1e-9, 0.05), 10))
    boxcox_eps: float = 0.5
    sparsity_threshold: float = 0.01

    def fit(self, train_rows: np.ndarray) -> FoldState:
        ds = self.dataset
        train_rows = np.asarray(train_rows)
        scaler = ChapterScaler().fit(ds.scores, train_rows)
        scaled = scaler.apply(ds.scores, train_rows)
        y_train = engagement_metric(scaled, ds.chapter_weights)
        bc = boxcox_fit(y_train, self.boxcox_grid, self.boxcox_eps)

        train_features = ds.feature_values[train_rows]
        mask = sparsity_mask(train_features, self.sparsity_threshold)
        state = standardize_fit(train_features[:, mask])
        retained = mask.copy()
        retained[mask] = state.kept
        names = tuple(c.name for c, keep in zip(ds.feature_columns, retained) if keep)
        return FoldState(scaler=scaler, boxcox=bc, retained=retained,
                         mean=state.mean, sd=state.sd, column_names=names)

    def response(self, rows: np.ndarray, state: FoldState) -> np.ndarray:
        scaled = state.scaler.apply(self.dataset.scores, np.asarray(rows))
        y = engagement_metric(scaled, self.dataset.chapter_weights)
        shifted = y + state.boxcox.shift
        # Out-of-sample rows can undershoot the training minimum; keep the
        # transform defined by flooring at a small positive value.
        shifted = np.maximum(shifted, self.boxcox_eps * 1e-2)
        return boxcox_transform(shifted, state.boxcox.lam)

    def raw_metric(self, rows: np.ndarray, state: FoldState) -> np.ndarray:
        scaled = state.scaler.apply(self.dataset.scores, np.asarray(rows))
        return engagement_metric(scaled, self.dataset.chapter_weights)

    def design(self, rows: np.ndarray, state: FoldState) -> DesignMatrix:
        rows = np.asarray(rows)
        values = self.dataset.feature_values[rows][:, state.retained]
        std = (values - state.mean) / state.sd
        return DesignMatrix(std, state.column_names, self.dataset.delivery[rows])

    def transform(self, rows: np.ndarray, state: FoldState) -> tuple[DesignMatrix, np.ndarray]:
        return self.design(rows, state), self.response(rows, state)

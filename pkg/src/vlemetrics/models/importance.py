"""Permutation importance: error increase from shuffling one column."""

from __future__ import annotations

import numpy as np

from .base import DesignMatrix, TrainedModel


def _mse(y: np.ndarray, yhat: np.ndarray) -> float:
    return float(np.mean(np.square(y - yhat)))


def permutation_importance(model: TrainedModel, design: DesignMatrix,
                           y: np.ndarray, n_repeats: int = 5,
                           seed: int = 0) -> dict[str, float]:
    """Mean squared-error increase per column over seeded shuffles.

    The delivery column, when present, is shuffled like any other
    predictor under the key ``delivery``. Values are raw (un-normalized)
    error differences.
    """
    y = np.asarray(y, dtype=float)
    baseline = _mse(y, model.predict(design))
    names = list(design.columns) + (["delivery"] if design.delivery is not None else [])
    totals = {name: 0.0 for name in names}
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    for _ in range(n_repeats):
        for name in names:
            perm = rng.permutation(design.n)
            if name == "delivery":
                shuffled = DesignMatrix(design.values, design.columns,
                                        design.delivery[perm])
            else:
                j = design.columns.index(name)
                values = design.values.copy()
                values[:, j] = values[perm, j]
                shuffled = DesignMatrix(values, design.columns, design.delivery)
            totals[name] += _mse(y, model.predict(shuffled)) - baseline
    return {name: total / n_repeats for name, total in totals.items()}

"""Shared model-facing containers and the fit/predict dispatch."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, SchemaMismatch

FAMILIES = ("pcr", "ridge", "lasso", "elastic_net", "random_forest", "gam", "rgam")

DELIVERY_LEVELS = (1, 2, 3)  # online, hybrid, in-person
REFERENCE_LEVEL = 1


@dataclass
class DesignMatrix:
    """Standardized continuous block plus the categorical delivery column."""

    values: np.ndarray  # (n, p) float
    columns: tuple[str, ...]
    delivery: Optional[np.ndarray] = None  # (n,) int codes, or None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.columns = tuple(self.columns)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError("values shape does not match column names")
        if self.delivery is not None:
            self.delivery = np.asarray(self.delivery, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def schema(self) -> tuple:
        return (self.columns, self.delivery is not None)

    def subset(self, rows: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(
            self.values[rows],
            self.columns,
            None if self.delivery is None else self.delivery[rows],
        )

    def select_columns(self, names: Sequence[str]) -> "DesignMatrix":
        idx = [self.columns.index(n) for n in names]
        return DesignMatrix(self.values[:, idx], tuple(names), self.delivery)

    def delivery_dummies(self) -> np.ndarray:
        """Two contrasts against the online reference level."""
        if self.delivery is None:
            return np.zeros((self.n, 0))
        cols = [
            (self.delivery == level).astype(float)
            for level in DELIVERY_LEVELS
            if level != REFERENCE_LEVEL
        ]
        return np.column_stack(cols) if cols else np.zeros((self.n, 0))


DELIVERY_DUMMY_NAMES = tuple(
    f"delivery_{level}_vs_{REFERENCE_LEVEL}" for level in DELIVERY_LEVELS if level != REFERENCE_LEVEL
)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def validated(self, p: int) -> "ModelSpec":
        """Check family-specific hyperparameter constraints against p columns."""
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        hp = self.hyperparameters
        def bad(msg):
            raise ConfigError(f"{self.family}: {msg}")
        if self.family in ("ridge", "lasso", "elastic_net"):
            lam = hp.get("lam", 0.0)
            if lam < 0:
                bad(f"lam must be >= 0, got {lam}")
            alpha = hp.get("alpha", {"ridge": 0.0, "lasso": 1.0}.get(self.family, 0.5))
            if not 0.0 <= alpha <= 1.0:
                bad(f"alpha must be in [0, 1], got {alpha}")
        elif self.family == "pcr":
            m = hp.get("n_components", 1)
            if not 1 <= m <= p:
                bad(f"n_components must be in [1, {p}], got {m}")
        elif self.family == "random_forest":
            if hp.get("n_trees", 500) < 1:
                bad("n_trees must be >= 1")
            mtry = hp.get("mtry")
            if mtry is not None and not 1 <= mtry <= p + 1:
                bad(f"mtry must be in [1, {p + 1}], got {mtry}")
            if hp.get("min_leaf", 5) < 1:
                bad("min_leaf must be >= 1")
        elif self.family in ("gam", "rgam"):
            if hp.get("basis_size", 10) < 4:
                bad("basis_size must be >= 4")
        return self


class TrainedModel:
    """Base for fitted models; subclasses implement ``_predict``."""

    family: str

    def __init__(self, family: str, schema: tuple):
        self.family = family
        self.schema = schema

    def check_schema(self, design: DesignMatrix) -> None:
        if design.schema != self.schema:
            raise SchemaMismatch(
                f"{self.family}: prediction columns do not match the training schema")

    def predict(self, design: DesignMatrix) -> np.ndarray:
        self.check_schema(design)
        yhat = self._predict(design)
        if not np.all(np.isfinite(yhat)):
            raise FloatingPointError(f"{self.family}: non-finite predictions")
        return yhat

    def _predict(self, design: DesignMatrix) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


def fit_model(spec: ModelSpec, design: DesignMatrix, y: np.ndarray) -> TrainedModel:
    """Dispatch a validated spec to its family's fit routine."""
    from . import forest, gam, linear

    spec = spec.validated(len(design.columns))
    hp = spec.hyperparameters
    if spec.family in ("ridge", "lasso", "elastic_net"):
        alpha = {"ridge": 0.0, "lasso": 1.0}.get(spec.family, hp.get("alpha", 0.5))
        return linear.fit_elastic_family(design, y, lam=hp.get("lam", 0.0),
                                         alpha=alpha, family=spec.family)
    if spec.family == "pcr":
        return linear.fit_pcr(design, y, n_components=hp.get("n_components", 1))
    if spec.family == "random_forest":
        return forest.fit_random_forest(
            design, y,
            n_trees=hp.get("n_trees", 500),
            mtry=hp.get("mtry"),
            min_leaf=hp.get("min_leaf", 5),
            seed=spec.seed,
            bootstrap=hp.get("bootstrap", True),
            n_jobs=hp.get("n_jobs", 1),
        )
    if spec.family in ("gam", "rgam"):
        return gam.fit_gam(
            design, y,
            basis_size=hp.get("basis_size", 10),
            max_backfit_iters=hp.get("max_backfit_iters", 50),
            lambda_grid=hp.get("lambda_grid"),
        )
    raise ConfigError(f"unknown model family {spec.family!r}")

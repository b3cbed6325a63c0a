"""Nested K-fold cross-validation, metrics, segment analysis, final refits.

The outer folds give out-of-sample RMSE and R-squared per model family;
the inner folds grid-search hyperparameters on each outer training
portion. Every transform (score scalers, response transform, sparsity
mask, standardizer, reduced-GAM selection) is refitted inside whichever
training split is current.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import TooFewRows, ZeroVarianceTarget
from .models import (
    DesignMatrix,
    ModelSpec,
    TrainedModel,
    fit_elastic_path,
    fit_gam,
    fit_model,
    permutation_importance,
    rgam_select,
)
from .models.gam import GamModel, SmoothTermReport
from .pipeline import FoldPipeline, FoldState

QUINTILE_LABELS = ("very_low", "low", "medium", "high", "very_high")

ELASTIC_FAMILIES = ("ridge", "lasso", "elastic_net")


def kfold_indices(n: int, k: int, seed: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Shuffled balanced folds; returns (test-fold list, assignment vector)."""
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    order = rng.permutation(n)
    folds = [np.sort(chunk) for chunk in np.array_split(order, k)]
    assignment = np.empty(n, dtype=np.int64)
    for f, rows in enumerate(folds):
        assignment[rows] = f
    return folds, assignment


def eval_metrics(y: np.ndarray, yhat: np.ndarray) -> tuple[float, float]:
    """(RMSE, R^2) on an evaluation set; the set's own mean anchors R^2."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if len(y) != len(yhat) or len(y) < 2:
        raise ValueError("need two aligned vectors of length >= 2")
    rmse = float(np.sqrt(np.mean(np.square(y - yhat))))
    ss_tot = float(np.sum(np.square(y - y.mean())))
    if ss_tot == 0.0:
        raise ZeroVarianceTarget(rmse)
    r2 = 1.0 - float(np.sum(np.square(y - yhat))) / ss_tot
    return rmse, r2


@dataclass
class FoldResult:
    fold: int
    rmse: float
    r2: float
    hyperparameters: dict


@dataclass
class FamilyCvResult:
    family: str
    folds: list[FoldResult]
    oof_pred: np.ndarray

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in ("rmse", "r2"):
            vals = np.array([getattr(f, name) for f in self.folds])
            out[name] = {"mean": float(vals.mean()), "sd": float(vals.std(ddof=1)),
                         "min": float(vals.min()), "max": float(vals.max())}
        return out


@dataclass
class CvReport:
    seed: int
    k: int
    fold_assignment: np.ndarray
    oof_y: np.ndarray  # observed transformed response, per row under its fold's state
    families: dict[str, FamilyCvResult]
    gam_fold_reports: list[list[SmoothTermReport]] = field(default_factory=list)

    def modal_hyperparameters(self, family: str) -> dict:
        results = self.families[family].folds
        keys = [tuple(sorted(f.hyperparameters.items())) for f in results]
        counts: dict[tuple, int] = {}
        for key in keys:
            counts[key] = counts.get(key, 0) + 1
        top = max(counts.values())
        tied = [dict(key) for key, c in counts.items() if c == top]
        tied.sort(key=lambda hp: _simplicity_key(family, hp))
        return tied[0]


def _simplicity_key(family: str, hp: dict) -> tuple:
    """Deterministic tie-break favouring the smaller-penalty/simpler model."""
    if family in ELASTIC_FAMILIES:
        return (hp.get("lam", 0.0), hp.get("alpha", 0.0))
    if family == "pcr":
        return (hp.get("n_components", 1),)
    if family == "random_forest":
        return (hp.get("n_trees", 0), -hp.get("min_leaf", 0), hp.get("mtry") or 0)
    if family in ("gam", "rgam"):
        return (hp.get("basis_size", 0),)
    return tuple(sorted(hp.items()))


def _mean_rmse(y: np.ndarray, yhat: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(y - yhat))))


def _inner_splits(train_rows: np.ndarray, k: int, seed: int):
    folds, _ = kfold_indices(len(train_rows), min(k, len(train_rows)), seed)
    for pos in folds:
        test = train_rows[pos]
        mask = np.ones(len(train_rows), dtype=bool)
        mask[pos] = False
        yield train_rows[mask], test


def _search_linear(family: str, grid: Sequence[dict], pipe: FoldPipeline,
                   train_rows: np.ndarray, k: int, seed: int) -> dict:
    by_alpha: dict[float, list[float]] = {}
    for hp in grid:
        alpha = {"ridge": 0.0, "lasso": 1.0}.get(family, hp.get("alpha", 0.5))
        by_alpha.setdefault(alpha, []).append(hp.get("lam", 0.0))
    losses = {(a, lam): [] for a, lams in by_alpha.items() for lam in lams}
    for tr, te in _inner_splits(train_rows, k, seed):
        state = pipe.fit(tr)
        Xtr, ytr = pipe.transform(tr, state)
        Xte, yte = pipe.transform(te, state)
        for alpha, lams in by_alpha.items():
            for lam, model in zip(lams, fit_elastic_path(Xtr, ytr, lams, alpha, family)):
                losses[(alpha, lam)].append(_mean_rmse(yte, model.predict(Xte)))
    best = min(losses, key=lambda key: (float(np.mean(losses[key])), key[1], key[0]))
    hp = {"lam": best[1]}
    if family == "elastic_net":
        hp["alpha"] = best[0]
    return hp


def _search_pcr(grid: Sequence[dict], pipe: FoldPipeline, train_rows: np.ndarray,
                k: int, seed: int) -> dict:
    components = sorted({hp.get("n_components", 1) for hp in grid})
    losses = {m: [] for m in components}
    for tr, te in _inner_splits(train_rows, k, seed):
        state = pipe.fit(tr)
        Xtr, ytr = pipe.transform(tr, state)
        Xte, yte = pipe.transform(te, state)
        _, s, vt = np.linalg.svd(Xtr.values, full_matrices=False)
        rank = int(np.sum(s > s[0] * max(Xtr.values.shape) * np.finfo(float).eps))
        dtr, dte = Xtr.delivery_dummies(), Xte.delivery_dummies()
        for m in components:
            if m > rank:
                losses[m].append(np.inf)
                continue
            V = vt[:m].T
            Ztr = np.column_stack([np.ones(Xtr.n), Xtr.values @ V] +
                                  ([dtr] if dtr.size else []))
            Zte = np.column_stack([np.ones(Xte.n), Xte.values @ V] +
                                  ([dte] if dte.size else []))
            coef, *_ = np.linalg.lstsq(Ztr, ytr, rcond=None)
            losses[m].append(_mean_rmse(yte, Zte @ coef))
    best = min(components, key=lambda m: (float(np.mean(losses[m])), m))
    return {"n_components": best}


def _search_generic(family: str, grid: Sequence[dict], pipe: FoldPipeline,
                    train_rows: np.ndarray, k: int, seed: int) -> dict:
    losses = [[] for _ in grid]
    for tr, te in _inner_splits(train_rows, k, seed):
        state = pipe.fit(tr)
        Xtr, ytr = pipe.transform(tr, state)
        Xte, yte = pipe.transform(te, state)
        for g, hp in enumerate(grid):
            model = fit_model(ModelSpec(family, hp, seed), Xtr, ytr)
            losses[g].append(_mean_rmse(yte, model.predict(Xte)))
    means = [float(np.mean(l)) for l in losses]
    order = sorted(range(len(grid)),
                   key=lambda g: (means[g], _simplicity_key(family, grid[g])))
    return grid[order[0]]


def select_hyperparameters(family: str, grid: Sequence[dict], pipe: FoldPipeline,
                           train_rows: np.ndarray, k: int, seed: int) -> dict:
    if len(grid) == 1:
        return dict(grid[0])
    if family in ELASTIC_FAMILIES:
        return _search_linear(family, grid, pipe, train_rows, k, seed)
    if family == "pcr":
        return _search_pcr(grid, pipe, train_rows, k, seed)
    return _search_generic(family, grid, pipe, train_rows, k, seed)


def _gam_fold_reports(pipe: FoldPipeline, train_rows: np.ndarray, hp: dict,
                      k: int, seed: int) -> list[list[SmoothTermReport]]:
    reports = []
    for tr, _te in _inner_splits(train_rows, k, seed):
        state = pipe.fit(tr)
        Xtr, ytr = pipe.transform(tr, state)
        model = fit_gam(Xtr, ytr, basis_size=hp.get("basis_size", 10),
                        max_backfit_iters=hp.get("max_backfit_iters", 50),
                        lambda_grid=hp.get("lambda_grid"))
        reports.append(model.term_significance())
    return reports


def fit_rgam(pipe: FoldPipeline, train_rows: np.ndarray, hp: dict, k: int,
             seed: int, state: Optional[FoldState] = None,
             fold_reports: Optional[list[list[SmoothTermReport]]] = None,
             level: float = 0.1, fold_fraction: float = 0.5,
             ) -> tuple[GamModel, list[str], FoldState]:
    """Select predictors by fold significance, then fit the reduced GAM."""
    if fold_reports is None:
        fold_reports = _gam_fold_reports(pipe, train_rows, hp, k, seed)
    selected = rgam_select(fold_reports, level=level, fold_fraction=fold_fraction)
    if state is None:
        state = pipe.fit(train_rows)
    available = set(state.column_names)
    selected = [name for name in selected if name in available]
    if not selected:
        warnings.warn("rgam: no predictor met the fold-significance rule; "
                      "falling back to intercept plus delivery")
    Xtr, ytr = pipe.transform(train_rows, state)
    model = fit_gam(Xtr.select_columns(selected), ytr,
                    basis_size=hp.get("basis_size", 10),
                    max_backfit_iters=hp.get("max_backfit_iters", 50),
                    lambda_grid=hp.get("lambda_grid"), family="rgam")
    return model, selected, state


def nested_cv(pipe: FoldPipeline, grids: Mapping[str, Sequence[dict]], k: int = 10,
              seed: int = 0, rgam_level: float = 0.1,
              rgam_fold_fraction: float = 0.5) -> CvReport:
    """Outer folds score each family; inner folds pick its hyperparameters."""
    n = pipe.dataset.n
    if n < 2 * k:
        raise TooFewRows(f"{n} rows cannot support {k} outer folds")
    folds, assignment = kfold_indices(n, k, seed)
    all_rows = np.arange(n)
    oof_y = np.full(n, np.nan)
    families: dict[str, FamilyCvResult] = {}
    gam_fold_reports: list[list[SmoothTermReport]] = []

    # Fold states and transforms are family-independent: fit once per fold.
    fold_cache = []
    for f, test in enumerate(folds):
        train = np.setdiff1d(all_rows, test)
        state = pipe.fit(train)
        Xtr, ytr = pipe.transform(train, state)
        Xte, yte = pipe.transform(test, state)
        fold_cache.append((train, test, state, Xtr, ytr, Xte, yte))
        oof_y[test] = yte

    for family, grid in grids.items():
        results = []
        oof_pred = np.full(n, np.nan)
        for f, (train, test, state, Xtr, ytr, Xte, yte) in enumerate(fold_cache):
            inner_seed = (seed + 1009 * (f + 1)) & 0xFFFFFFFFFFFFFFFF
            if family == "rgam":
                hp = dict(grid[0]) if len(grid) == 1 else _search_generic(
                    "gam", grid, pipe, train, k, inner_seed)
                model, selected, _ = fit_rgam(
                    pipe, train, hp, k, inner_seed, state=state,
                    level=rgam_level, fold_fraction=rgam_fold_fraction)
                yhat = model.predict(Xte.select_columns(selected))
                hp = {**hp, "selected": len(selected)}
            else:
                hp = select_hyperparameters(family, grid, pipe, train, k, inner_seed)
                model = fit_model(ModelSpec(family, hp, seed), Xtr, ytr)
                yhat = model.predict(Xte)
                if family == "gam":
                    gam_fold_reports.append(model.term_significance())
            rmse, r2 = eval_metrics(yte, yhat)
            results.append(FoldResult(fold=f, rmse=rmse, r2=r2, hyperparameters=hp))
            oof_pred[test] = yhat
        families[family] = FamilyCvResult(family, results, oof_pred)

    return CvReport(seed=seed, k=k, fold_assignment=assignment, oof_y=oof_y,
                    families=families, gam_fold_reports=gam_fold_reports)


@dataclass
class SegmentReport:
    labels: tuple[str, ...]
    mean_residual: np.ndarray  # mean(yhat - y) per quintile
    rmse: np.ndarray
    counts: np.ndarray


def segment_analysis(y: np.ndarray, yhat: np.ndarray) -> SegmentReport:
    """Quintiles of the observed metric; per-group mean error and RMSE.

    Ties rank stably by (value, row index), and group sizes differ by at
    most one.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if np.any(np.isnan(yhat)) or len(y) != len(yhat):
        raise ValueError("pooled predictions must cover every row exactly once")
    order = np.lexsort((np.arange(len(y)), y))
    groups = np.array_split(order, len(QUINTILE_LABELS))
    mean_res = np.array([float(np.mean(yhat[g] - y[g])) for g in groups])
    rmse = np.array([float(np.sqrt(np.mean(np.square(yhat[g] - y[g])))) for g in groups])
    counts = np.array([len(g) for g in groups])
    return SegmentReport(QUINTILE_LABELS, mean_res, rmse, counts)


@dataclass
class RefitResult:
    family: str
    hyperparameters: dict
    model: TrainedModel
    state: FoldState
    train_rmse: float
    selected: Optional[list[str]] = None
    importance: Optional[dict[str, float]] = None
    significance: Optional[list[SmoothTermReport]] = None


def final_refit(pipe: FoldPipeline, report: CvReport,
                grids: Mapping[str, Sequence[dict]], seed: int = 0,
                importance_repeats: int = 5, rgam_level: float = 0.1,
                rgam_fold_fraction: float = 0.5) -> dict[str, RefitResult]:
    """Refit every family on all rows with its modal fold hyperparameters."""
    n = pipe.dataset.n
    all_rows = np.arange(n)
    state = pipe.fit(all_rows)
    X, y = pipe.transform(all_rows, state)
    out: dict[str, RefitResult] = {}
    for family in grids:
        hp = report.modal_hyperparameters(family)
        hp = {key: value for key, value in hp.items() if key != "selected"}
        selected = None
        importance = None
        significance = None
        if family == "rgam":
            fold_reports = report.gam_fold_reports or None
            model, selected, _ = fit_rgam(
                pipe, all_rows, hp, report.k, seed, state=state,
                fold_reports=fold_reports, level=rgam_level,
                fold_fraction=rgam_fold_fraction)
            yhat = model.predict(X.select_columns(selected))
            significance = model.term_significance()
        else:
            model = fit_model(ModelSpec(family, hp, seed), X, y)
            yhat = model.predict(X)
            if family == "gam":
                significance = model.term_significance()
            if family == "random_forest":
                importance = permutation_importance(
                    model, X, y, n_repeats=importance_repeats, seed=seed)
        out[family] = RefitResult(
            family=family, hyperparameters=hp, model=model, state=state,
            train_rmse=_mean_rmse(y, yhat), selected=selected,
            importance=importance, significance=significance)
    return out

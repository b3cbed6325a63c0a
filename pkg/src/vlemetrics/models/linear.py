"""Penalized linear models via cyclic coordinate descent, plus PCR.

The elastic family minimizes

    (1/2n) ||y - b0 - A beta||^2 + lam * (alpha ||beta||_1 + (1-alpha)/2 ||beta||_2^2)

over the continuous columns; the intercept and the delivery contrasts
are never penalized. Coordinate updates run against the Gram matrix so
a sweep costs O(p^2) rather than O(np).
"""

from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np

from ..errors import RankDeficient
from .base import DELIVERY_DUMMY_NAMES, DesignMatrix, TrainedModel

CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000


def _soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


class ElasticNetModel(TrainedModel):
    def __init__(self, family, schema, beta, gamma, beta0, lam, alpha,
                 converged, n_sweeps):
        super().__init__(family, schema)
        self.beta = beta  # continuous-column coefficients
        self.gamma = gamma  # delivery-contrast coefficients
        self.beta0 = beta0
        self.lam = lam
        self.alpha = alpha
        self.converged = converged
        self.n_sweeps = n_sweeps

    def _predict(self, design: DesignMatrix) -> np.ndarray:
        yhat = self.beta0 + design.values @ self.beta
        if self.gamma.size:
            yhat = yhat + design.delivery_dummies() @ self.gamma
        return yhat

    def kkt_residuals(self, design: DesignMatrix, y: np.ndarray) -> np.ndarray:
        """Per penalized column, the stationarity violation at the solution.

        Zero coefficients violate by max(0, |g_j| - lam*alpha); active ones
        by |g_j - lam*(1-alpha)*beta_j - lam*alpha*sign(beta_j)|, where
        g_j = x_j' r / n.
        """
        n = design.n
        r = y - self.predict(design)
        grad = design.values.T @ r / n
        out = np.empty_like(self.beta)
        for j, b in enumerate(self.beta):
            if b == 0.0:
                out[j] = max(0.0, abs(grad[j]) - self.lam * self.alpha)
            else:
                out[j] = abs(grad[j] - self.lam * (1 - self.alpha) * b
                             - self.lam * self.alpha * np.sign(b))
        return out


def _cd_solve(A: np.ndarray, y: np.ndarray, lam: float, alpha: float,
              penalized: np.ndarray, beta: np.ndarray, beta0: float,
              tol: float, max_sweeps: int) -> tuple[np.ndarray, float, bool, int]:
    """Cyclic coordinate descent on a dense design; returns updated state."""
    n, m = A.shape
    col_means = A.mean(axis=0)
    gram = A.T @ A / n
    sq = np.diag(gram).copy()
    b_vec = A.T @ y / n
    y_mean = float(y.mean())

    # q_j = x_j' r / n for the current residual r = y - beta0 - A beta.
    q = b_vec - beta0 * col_means - gram @ beta
    mean_r = y_mean - beta0 - float(col_means @ beta)

    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = abs(mean_r)
        if mean_r != 0.0:
            beta0 += mean_r
            q -= col_means * mean_r
            mean_r = 0.0
        for j in range(m):
            sj = sq[j]
            if sj == 0.0 and not penalized[j]:
                continue
            rho = q[j] + sj * beta[j]
            if penalized[j]:
                new = _soft_threshold(rho, l1) / (sj + l2) if sj + l2 > 0 else 0.0
            else:
                new = rho / sj if sj > 0 else 0.0
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
                q -= gram[:, j] * delta
                mean_r -= col_means[j] * delta
                change = abs(delta)
                if change > max_change:
                    max_change = change
        if max_change < tol:
            converged = True
            break
    return beta, beta0, converged, sweeps


def fit_elastic_family(design: DesignMatrix, y: np.ndarray, lam: float,
                       alpha: float, family: str = "elastic_net",
                       tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS,
                       warm: Optional[ElasticNetModel] = None) -> ElasticNetModel:
    y = np.asarray(y, dtype=float)
    dummies = design.delivery_dummies()
    A = np.column_stack([design.values, dummies]) if dummies.size else design.values
    p = design.values.shape[1]
    penalized = np.array([True] * p + [False] * dummies.shape[1])

    if warm is not None:
        beta = np.concatenate([warm.beta, warm.gamma]).copy()
        beta0 = warm.beta0
    else:
        beta = np.zeros(A.shape[1])
        beta0 = float(y.mean())

    beta, beta0, converged, sweeps = _cd_solve(
        A, y, lam, alpha, penalized, beta, beta0, tol, max_sweeps)
    if not converged:
        warnings.warn(f"{family}: coordinate descent hit {max_sweeps} sweeps "
                      "without converging; returning the last iterate")
    return ElasticNetModel(family, design.schema, beta[:p], beta[p:], beta0,
                           lam, alpha, converged, sweeps)


def fit_elastic_path(design: DesignMatrix, y: np.ndarray, lams: Sequence[float],
                     alpha: float, family: str = "elastic_net") -> list[ElasticNetModel]:
    """Fit a descending lambda path with warm starts."""
    order = np.argsort(lams)[::-1]
    fits: list[Optional[ElasticNetModel]] = [None] * len(lams)
    warm = None
    for k in order:
        warm = fit_elastic_family(design, y, lams[k], alpha, family, warm=warm)
        fits[k] = warm
    return fits


def lasso_null_lambda(design: DesignMatrix, y: np.ndarray) -> float:
    """Smallest lam at which the lasso zeroes every penalized coefficient."""
    r = y - np.mean(y)
    return float(np.max(np.abs(design.values.T @ r)) / design.n)


class PcrModel(TrainedModel):
    def __init__(self, schema, loadings, coef, intercept, n_components):
        super().__init__("pcr", schema)
        self.loadings = loadings  # (p, m), orthonormal columns
        self.coef = coef  # (m + n_dummies,)
        self.intercept = intercept
        self.n_components = n_components

    def _predict(self, design: DesignMatrix) -> np.ndarray:
        scores = design.values @ self.loadings
        dummies = design.delivery_dummies()
        Z = np.column_stack([scores, dummies]) if dummies.size else scores
        return self.intercept + Z @ self.coef


def fit_pcr(design: DesignMatrix, y: np.ndarray, n_components: int) -> PcrModel:
    """Regress on the top principal-component scores of the continuous block.

    The delivery contrasts enter the regression unrotated.
    """
    X = design.values
    y = np.asarray(y, dtype=float)
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(X.shape) * np.finfo(float).eps)) if s.size else 0
    if n_components > rank:
        raise RankDeficient(f"n_components={n_components} exceeds rank {rank}")
    loadings = vt[:n_components].T
    scores = X @ loadings
    dummies = design.delivery_dummies()
    Z = np.column_stack([np.ones(len(y)), scores] + ([dummies] if dummies.size else []))
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    return PcrModel(design.schema, loadings, coef[1:], float(coef[0]), n_components)

"""Regression model family behind a uniform fit/predict interface."""

from .base import (
    DELIVERY_DUMMY_NAMES,
    DELIVERY_LEVELS,
    FAMILIES,
    REFERENCE_LEVEL,
    DesignMatrix,
    ModelSpec,
    TrainedModel,
    fit_model,
)
from .forest import RandomForestModel, fit_random_forest
from .gam import GamModel, SmoothTermReport, TermSmoother, fit_gam, rgam_select
from .importance import permutation_importance
from .linear import (
    ElasticNetModel,
    PcrModel,
    fit_elastic_family,
    fit_elastic_path,
    fit_pcr,
    lasso_null_lambda,
)

__all__ = [
    "DELIVERY_DUMMY_NAMES",
    "DELIVERY_LEVELS",
    "FAMILIES",
    "REFERENCE_LEVEL",
    "DesignMatrix",
    "ModelSpec",
    "TrainedModel",
    "fit_model",
    "RandomForestModel",
    "fit_random_forest",
    "GamModel",
    "SmoothTermReport",
    "TermSmoother",
    "fit_gam",
    "rgam_select",
    "permutation_importance",
    "ElasticNetModel",
    "PcrModel",
    "fit_elastic_family",
    "fit_elastic_path",
    "fit_pcr",
    "lasso_null_lambda",
]

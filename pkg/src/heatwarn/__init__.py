"""Data-driven alert thresholds for heat-health warning systems."""

from .dataset import (
    Dataset,
    LagWeights,
    SplineSpec,
    apply_lag,
    add_time_covariates,
    build_covariates,
    lagged_indicator,
    load_csv,
    natural_spline_basis,
)
from .glm import GAUSSIAN, QUASIPOISSON, GlmFit, fit_glm, predict
from .scoring import (
    Scores,
    ThresholdSet,
    alerts,
    confusion_scores,
    coverage,
    episodes,
    evaluate_thresholds,
    expected_mortality,
    over_mortality,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "LagWeights",
    "SplineSpec",
    "apply_lag",
    "add_time_covariates",
    "build_covariates",
    "lagged_indicator",
    "load_csv",
    "natural_spline_basis",
    "GAUSSIAN",
    "QUASIPOISSON",
    "GlmFit",
    "fit_glm",
    "predict",
    "Scores",
    "ThresholdSet",
    "alerts",
    "confusion_scores",
    "coverage",
    "episodes",
    "evaluate_thresholds",
    "expected_mortality",
    "over_mortality",
    "__version__",
]

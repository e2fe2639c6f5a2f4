"""Bayesian joint modeling of mixed longitudinal outcomes and event times,
with dynamically updated subject-level predictions and censoring-aware
validation metrics."""

from .errors import ConfigurationError, DataError, HazardOverflowError, JointraitError
from .model import (
    DesignSpec,
    LatentState,
    ModelSpec,
    OutcomeSpec,
    ParameterDraw,
    SubjectEffects,
    SubjectRecord,
    Term,
    Visit,
    latent_trait,
    longitudinal_loglik,
    outcome_distribution,
    spline_basis,
)
from .survival import HazardSegment, cumulative_hazard, log_hazard, segmentize, survival_loglik
from .inference import (
    ChainConfig,
    PosteriorArchive,
    PriorSpec,
    fit,
    gelman_rubin,
    grad_log_posterior,
    log_posterior,
)
from .prediction import (
    PredictionRequest,
    RiskCurve,
    TrajectoryBand,
    predict,
    predict_risk,
    predict_trajectory,
    sample_subject_effects,
)
from .evaluation import EvalConfig, EvalRecord, brier, censoring_weight, kernel_km, roc_auc
from .simulate import SimScenario, generate_dataset, inverse_survival_sample

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "ConfigurationError",
    "DataError",
    "DesignSpec",
    "EvalConfig",
    "EvalRecord",
    "HazardOverflowError",
    "HazardSegment",
    "JointraitError",
    "LatentState",
    "ModelSpec",
    "OutcomeSpec",
    "ParameterDraw",
    "PosteriorArchive",
    "PredictionRequest",
    "PriorSpec",
    "RiskCurve",
    "SimScenario",
    "SubjectEffects",
    "SubjectRecord",
    "Term",
    "TrajectoryBand",
    "Visit",
    "brier",
    "censoring_weight",
    "cumulative_hazard",
    "fit",
    "gelman_rubin",
    "generate_dataset",
    "grad_log_posterior",
    "inverse_survival_sample",
    "kernel_km",
    "latent_trait",
    "log_hazard",
    "log_posterior",
    "longitudinal_loglik",
    "outcome_distribution",
    "predict",
    "predict_risk",
    "predict_trajectory",
    "roc_auc",
    "sample_subject_effects",
    "segmentize",
    "spline_basis",
    "survival_loglik",
]

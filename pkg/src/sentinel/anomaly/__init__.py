"""Novelty-mode outlier detectors and their tuning pipeline."""
from ._common import DetectorError, threshold_from_scores
from .envelope import EeModel, ee_fit, ee_predict, ee_score, robust_location_scatter
from .iforest import (IforestModel, c_factor, harmonic, iforest_fit, iforest_predict,
                      iforest_score, scores_from_path_length)
from .lof import LofModel, lof_fit, lof_predict, lof_score
from .pipeline import (
    DEFAULT_CONTAMINATION,
    DEFAULT_N_COMPONENTS,
    DETECTORS,
    AnomalyPipeline,
    Standardizer,
    TuneResult,
    anomaly_objective,
    evaluate_detectors,
    fit_pipeline,
    tune,
)

__all__ = [
    "DetectorError", "threshold_from_scores",
    "EeModel", "ee_fit", "ee_predict", "ee_score", "robust_location_scatter",
    "IforestModel", "c_factor", "harmonic", "iforest_fit", "iforest_predict",
    "iforest_score", "scores_from_path_length",
    "LofModel", "lof_fit", "lof_predict", "lof_score",
    "DEFAULT_CONTAMINATION", "DEFAULT_N_COMPONENTS", "DETECTORS",
    "AnomalyPipeline", "Standardizer", "TuneResult", "anomaly_objective",
    "evaluate_detectors", "fit_pipeline", "tune",
]

"""Joint-coverage conformal calibration for multi-stage prediction pipelines."""

__version__ = "0.1.0"

from .calibrators import (  # noqa: E402
    Objective,
    TunedSearchSpec,
    calibrate,
    calibrate_bonferroni,
    calibrate_independent,
    calibrate_pasc,
    calibrate_tuned_bonferroni,
)
from .core import (  # noqa: E402
    AcceptanceOutcome,
    Method,
    PredictionCandidates,
    RangeWarning,
    ScoreMatrix,
    ThresholdVector,
    accept,
    conformal_quantile,
    joint_max_scores,
)
from .evaluation import evaluate_coverage, prediction_sets, slice_report  # noqa: E402

__all__ = [
    "AcceptanceOutcome",
    "Method",
    "Objective",
    "PredictionCandidates",
    "RangeWarning",
    "ScoreMatrix",
    "ThresholdVector",
    "TunedSearchSpec",
    "accept",
    "calibrate",
    "calibrate_bonferroni",
    "calibrate_independent",
    "calibrate_pasc",
    "calibrate_tuned_bonferroni",
    "conformal_quantile",
    "evaluate_coverage",
    "joint_max_scores",
    "prediction_sets",
    "slice_report",
]

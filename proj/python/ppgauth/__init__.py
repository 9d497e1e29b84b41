"""PPG biometric authentication: preprocessing, scalograms, hybrid model and metrics."""

from ._core import (
    Error,
    InvalidArgument,
    ParseError,
    ShapeError,
    StageError,
    UndefinedMetric,
    auc,
    calibrate_threshold,
    classification_report,
    confusion_metrics,
    cosine_similarity,
    detrend,
    enroll,
    false_accept_rate,
    false_reject_rate,
    generate_subject,
    identify,
    normalize,
    preprocess,
    preprocess_stages,
    resample,
    roc,
    run_pipeline,
    scalogram,
    segment,
    segment_count,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

"""Unsupervised OOD detection via per-layer KDE over deep features.

Feature files in, fitted density models and detection metrics out. See the
README for the file formats and the CLI verbs.
"""

from .backend import BACKEND_NAME
from .bandwidth import (
    DEFAULT_K_CANDIDATES,
    KCandidateSet,
    KSelectionReport,
    knn_bandwidths,
    select_k,
)
from .errors import ConfigError, KdeOodError, ModelFormatError, ValidationError
from .features import (
    ChecksumMismatchError,
    DatasetManifest,
    FeatureFormatError,
    InconsistentRowCountError,
    LayerFeatureSet,
    MalformedHeaderError,
    NonFiniteValueError,
    ReferenceSubset,
    load_with_manifest,
    read_feature_file,
    subsample,
    subsample_indices,
    write_feature_file,
    write_manifest,
)
from .fusion import (
    EPS_STD,
    FusionModel,
    ScoreTable,
    TrainConfig,
    confidence,
    confidence_batch,
    loss_and_gradient,
    train_fusion,
)
from .kde import (
    EPS_SIGMA,
    SQRT_2PI,
    DistanceMetric,
    LayerKdeModel,
    distance,
    fit_layer,
    gaussian_kernel,
    loo_score,
    loo_scores,
    score,
    score_batch,
)
from .metrics import (
    EvalReport,
    aupr,
    auroc,
    detection_error,
    evaluate,
    fpr_at_tpr,
    roc_curve,
)
from .pipeline import (
    PipelineConfig,
    PipelineModel,
    cmd_evaluate,
    cmd_fit,
    cmd_score,
    cmd_select_k,
    cmd_train_fusion,
    load_features,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "ChecksumMismatchError",
    "ConfigError",
    "DEFAULT_K_CANDIDATES",
    "DatasetManifest",
    "DistanceMetric",
    "EPS_SIGMA",
    "EPS_STD",
    "EvalReport",
    "FeatureFormatError",
    "FusionModel",
    "InconsistentRowCountError",
    "KCandidateSet",
    "KSelectionReport",
    "KdeOodError",
    "LayerFeatureSet",
    "LayerKdeModel",
    "MalformedHeaderError",
    "ModelFormatError",
    "NonFiniteValueError",
    "PipelineConfig",
    "PipelineModel",
    "ReferenceSubset",
    "SQRT_2PI",
    "ScoreTable",
    "TrainConfig",
    "ValidationError",
    "aupr",
    "auroc",
    "cmd_evaluate",
    "cmd_fit",
    "cmd_score",
    "cmd_select_k",
    "cmd_train_fusion",
    "confidence",
    "confidence_batch",
    "detection_error",
    "distance",
    "evaluate",
    "fit_layer",
    "fpr_at_tpr",
    "gaussian_kernel",
    "knn_bandwidths",
    "load_features",
    "load_with_manifest",
    "loo_score",
    "loo_scores",
    "loss_and_gradient",
    "read_feature_file",
    "roc_curve",
    "score",
    "score_batch",
    "select_k",
    "subsample",
    "subsample_indices",
    "train_fusion",
    "write_feature_file",
    "write_manifest",
    "__version__",
]

"""Weakly supervised anomaly detection on CNN patch feature maps.

Few labeled anomaly images plus many normal images: normal patch features
form a memory bank, anomaly-image patches are mined by nearest-bank distance,
the scarce mined features are augmented by convex mixing against the bank,
and a small hinge-loss MLP scores patches at test time.  The package ships a
bit-exact feature-map file format (WSFX), a synthetic dataset generator, a
stage-by-stage CLI, and sklearn-style estimator wrappers.
"""

__version__ = "0.1.0"

from .aggregation import (
    AggregationConfig,
    PatchSet,
    aggregate,
    align_multiscale,
    extract_patch_set,
    neighborhood_mean,
    resize_bilinear,
)
from .bank import (
    NormalBank,
    build_bank,
    knn_score_image,
    load_bank,
    nearest_distance,
    nearest_distances,
    save_bank,
)
from .discriminator import (
    Discriminator,
    TrainConfig,
    TrainingDivergedError,
    finite_difference_gradients,
    gradients,
    load_model,
    loss,
    save_model,
    train,
)
from .estimators import (
    FeatureMapAggregator,
    HingePatchClassifier,
    NearestNormalScorer,
    WeaklySupervisedImageDetector,
)
from .feature_io import (
    DatasetManifest,
    ManifestEntry,
    SynthConfig,
    generate_synthetic,
    read_feature_map,
    write_feature_map,
)
from .inference import AnomalyMap, ImageResult, render_map, score_image
from .metrics import (
    EvalReport,
    aggregate_runs,
    auroc,
    build_report,
    rank_auroc,
    threshold_and_classify,
)
from .mining import (
    AugmentedAnomalySet,
    MinedAnomalySet,
    linear_mix,
    mine,
    take_all_patches,
)

__all__ = [
    "__version__",
    "AggregationConfig",
    "PatchSet",
    "aggregate",
    "align_multiscale",
    "extract_patch_set",
    "neighborhood_mean",
    "resize_bilinear",
    "NormalBank",
    "build_bank",
    "knn_score_image",
    "load_bank",
    "nearest_distance",
    "nearest_distances",
    "save_bank",
    "Discriminator",
    "TrainConfig",
    "TrainingDivergedError",
    "finite_difference_gradients",
    "gradients",
    "load_model",
    "loss",
    "save_model",
    "train",
    "FeatureMapAggregator",
    "HingePatchClassifier",
    "NearestNormalScorer",
    "WeaklySupervisedImageDetector",
    "DatasetManifest",
    "ManifestEntry",
    "SynthConfig",
    "generate_synthetic",
    "read_feature_map",
    "write_feature_map",
    "AnomalyMap",
    "ImageResult",
    "render_map",
    "score_image",
    "EvalReport",
    "aggregate_runs",
    "auroc",
    "build_report",
    "rank_auroc",
    "threshold_and_classify",
    "AugmentedAnomalySet",
    "MinedAnomalySet",
    "linear_mix",
    "mine",
    "take_all_patches",
]

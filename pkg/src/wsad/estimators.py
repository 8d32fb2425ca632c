"""Scikit-learn compatible wrappers around the functional pipeline.

These estimators expose the library through the familiar
fit / transform / decision_function surface so the pieces drop into
sklearn Pipelines, grid searches and cross-validation.  Score orientation
follows the library convention everywhere: larger output = more anomalous.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .aggregation import AggregationConfig, PatchSet, aggregate, align_multiscale
from .bank import NormalBank, bank_from_patch_sets, nearest_distances
from .discriminator import TrainConfig, train
from .inference import score_image
from .mining import linear_mix, mine, take_all_patches

__all__ = [
    "FeatureMapAggregator",
    "NearestNormalScorer",
    "HingePatchClassifier",
    "WeaklySupervisedImageDetector",
]


def _as_map_list(X) -> list[np.ndarray]:
    """Accept a (n, H, W, C) array or a sequence of (H, W, C) maps."""
    if isinstance(X, np.ndarray):
        if X.ndim == 4:
            return [X[i] for i in range(X.shape[0])]
        if X.ndim == 3:
            return [X]
        raise ValueError(f"expected maps of shape (n, H, W, C) or (H, W, C), got {X.shape}")
    return [np.asarray(m) for m in X]


def _patch_sets(maps: list[np.ndarray], config: AggregationConfig, prefix: str) -> list[PatchSet]:
    return [
        aggregate(align_multiscale([m], config), config, image_id=f"{prefix}-{i:04d}")
        for i, m in enumerate(maps)
    ]


class FeatureMapAggregator(BaseEstimator, TransformerMixin):
    """Stateless transformer: raw maps -> neighborhood-aggregated maps.

    Parameters
    ----------
    patch_size : odd int, default 5
        Edge length of the local averaging window.
    """

    def __init__(self, patch_size: int = 5):
        self.patch_size = patch_size

    def fit(self, X, y=None):
        self._config()  # validate parameters early
        return self

    def transform(self, X):
        config = self._config()
        maps = _as_map_list(X)
        out = [aggregate(m, config).grid() for m in maps]
        return np.stack(out, axis=0)

    def _config(self) -> AggregationConfig:
        return AggregationConfig(patch_size=self.patch_size)


class NearestNormalScorer(BaseEstimator):
    """Distance-to-normal-bank anomaly scorer over (n, channels) rows.

    fit() stores the rows of X as the normal bank; score_samples() returns
    the exact nearest-bank L2 distance per query row (larger = more
    anomalous).
    """

    def __init__(self):
        pass

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        self.bank_ = NormalBank(
            features=X,
            row_origins=[("fit", 0, i) for i in range(X.shape[0])],
        )
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "bank_")
        X = check_array(X, dtype=np.float32)
        return nearest_distances(self.bank_, X)

    def decision_function(self, X) -> np.ndarray:
        return self.score_samples(X)


class HingePatchClassifier(BaseEstimator):
    """Binary classifier over patch features with the truncated hinge loss.

    Trains the MLP discriminator directly on class-0 rows vs class-1 rows of
    (X, y); no bank, mining or mixing is involved.  decision_function returns
    the raw discriminator score, predict thresholds at the hinge midpoint 0.5.
    """

    def __init__(
        self,
        epochs: int = 40,
        batch_size: int = 4096,
        learning_rate: float = 1e-4,
        hidden_dim: int | None = None,
        seed: int = 0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.hidden_dim = hidden_dim
        self.seed = seed

    def fit(self, X, y):
        X = check_array(X, dtype=np.float32)
        y = np.asarray(y)
        if set(np.unique(y)) - {0, 1}:
            raise ValueError("labels must be binary 0/1")
        normals, anomalies = X[y == 0], X[y == 1]
        if len(normals) == 0 or len(anomalies) == 0:
            raise ValueError("need at least one sample of each class")
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )
        self.model_ = train(normals, anomalies, config, hidden_dim=self.hidden_dim)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        return self.model_.forward(X.astype(np.float64))

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0.5).astype(int)

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))


class WeaklySupervisedImageDetector(BaseEstimator):
    """End-to-end weakly supervised detector over feature maps.

    fit(maps, y) takes per-image feature maps (n, H, W, C) with image-level
    labels (0 normal, 1 anomalous, few expected), builds the normal bank,
    mines and augments anomaly features, and trains the discriminator.
    decision_function(maps) returns image-level anomaly scores (anomaly-map
    maxima).

    Parameters mirror the pipeline stages; ``mining=False`` keeps all anomaly
    patches and ``mixing=False`` skips augmentation (the ablation switches).
    """

    def __init__(
        self,
        patch_size: int = 5,
        retention_rate: float = 0.2,
        alpha_low: float = 0.1,
        alpha_high: float = 1.0,
        mining: bool = True,
        mixing: bool = True,
        epochs: int = 40,
        batch_size: int = 4096,
        learning_rate: float = 1e-4,
        seed: int = 0,
    ):
        self.patch_size = patch_size
        self.retention_rate = retention_rate
        self.alpha_low = alpha_low
        self.alpha_high = alpha_high
        self.mining = mining
        self.mixing = mixing
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        maps = _as_map_list(X)
        y = np.asarray(y)
        if len(maps) != len(y):
            raise ValueError(f"{len(maps)} maps but {len(y)} labels")
        config = AggregationConfig(patch_size=self.patch_size)
        normal_maps = [m for m, lbl in zip(maps, y) if lbl == 0]
        anomaly_maps = [m for m, lbl in zip(maps, y) if lbl == 1]
        if not normal_maps or not anomaly_maps:
            raise ValueError("need at least one normal and one anomalous map")

        normal_sets = _patch_sets(normal_maps, config, "normal")
        anomaly_sets = _patch_sets(anomaly_maps, config, "anomaly")

        self.bank_ = bank_from_patch_sets(normal_sets)
        if self.mining:
            self.mined_ = mine(self.bank_, anomaly_sets, self.retention_rate)
        else:
            self.mined_ = take_all_patches(anomaly_sets)
        if self.mixing:
            augmented = linear_mix(
                self.mined_,
                self.bank_,
                alpha_low=self.alpha_low,
                alpha_high=self.alpha_high,
                seed=self.seed,
            )
            anomaly_features = augmented.features_f32()
        else:
            anomaly_features = self.mined_.features
        train_config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )
        self.model_ = train(self.bank_.features, anomaly_features, train_config)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        config = AggregationConfig(patch_size=self.patch_size)
        sets = _patch_sets(_as_map_list(X), config, "query")
        return np.array([score_image(self.model_, ps)[1].score for ps in sets])

    def anomaly_maps(self, X) -> list[np.ndarray]:
        """Raw per-patch score grids for each input map."""
        check_is_fitted(self, "model_")
        config = AggregationConfig(patch_size=self.patch_size)
        sets = _patch_sets(_as_map_list(X), config, "query")
        return [score_image(self.model_, ps)[0].grid for ps in sets]

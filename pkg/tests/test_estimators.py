"""Estimator API surface tests: sklearn conventions plus numeric agreement."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from wsad import (
    FeatureMapAggregator,
    HingePatchClassifier,
    NearestNormalScorer,
    WeaklySupervisedImageDetector,
    nearest_distances,
    neighborhood_mean,
    rank_auroc,
)
from wsad.bank import NormalBank


def blob_data(seed=0, n=150):
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((n, 4)) * 0.4 + [-2, 0, 0, 0]
    X1 = rng.standard_normal((n, 4)) * 0.4 + [2, 0, 0, 0]
    X = np.vstack([X0, X1]).astype(np.float32)
    y = np.array([0] * n + [1] * n)
    return X, y


class TestSklearnConventions:
    @pytest.mark.parametrize(
        "estimator",
        [
            FeatureMapAggregator(),
            NearestNormalScorer(),
            HingePatchClassifier(),
            WeaklySupervisedImageDetector(),
        ],
    )
    def test_get_set_params_and_clone(self, estimator):
        params = estimator.get_params()
        rebuilt = clone(estimator)
        assert rebuilt.get_params() == params
        estimator.set_params(**params)

    def test_fit_returns_self(self):
        X, y = blob_data()
        scorer = NearestNormalScorer()
        assert scorer.fit(X[y == 0]) is scorer

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            NearestNormalScorer().score_samples(np.zeros((2, 3)))
        with pytest.raises(NotFittedError):
            HingePatchClassifier().decision_function(np.zeros((2, 3)))


class TestFeatureMapAggregator:
    def test_transform_matches_core_function(self):
        rng = np.random.default_rng(1)
        maps = rng.standard_normal((3, 6, 6, 2)).astype(np.float32)
        out = FeatureMapAggregator(patch_size=3).fit(maps).transform(maps)
        assert out.shape == (3, 6, 6, 2)
        for i in range(3):
            np.testing.assert_array_equal(out[i], neighborhood_mean(maps[i], 3))

    def test_invalid_patch_size(self):
        with pytest.raises(ValueError):
            FeatureMapAggregator(patch_size=4).fit(None)


class TestNearestNormalScorer:
    def test_matches_functional_core(self):
        rng = np.random.default_rng(2)
        train = rng.standard_normal((80, 6)).astype(np.float32)
        queries = rng.standard_normal((15, 6)).astype(np.float32)
        scorer = NearestNormalScorer().fit(train)
        bank = NormalBank(train, [("x", 0, i) for i in range(80)])
        np.testing.assert_allclose(
            scorer.score_samples(queries), nearest_distances(bank, queries), rtol=1e-12
        )

    def test_members_score_zero(self):
        rng = np.random.default_rng(3)
        train = rng.standard_normal((40, 5)).astype(np.float32)
        scorer = NearestNormalScorer().fit(train)
        assert np.all(scorer.score_samples(train[:10]) == 0.0)


class TestHingePatchClassifier:
    def test_separable_blobs(self):
        X, y = blob_data(seed=4)
        clf = HingePatchClassifier(epochs=200, batch_size=64, learning_rate=1e-2, seed=0)
        clf.fit(X, y)
        assert clf.score(X, y) >= 0.99
        scores = clf.decision_function(X)
        assert rank_auroc(y, scores) == 1.0

    def test_composes_in_sklearn_pipeline(self):
        X, y = blob_data(seed=5)
        pipeline = Pipeline(
            [
                ("scale", StandardScaler()),
                ("clf", HingePatchClassifier(epochs=150, batch_size=64,
                                             learning_rate=1e-2, seed=0)),
            ]
        )
        pipeline.fit(X, y)
        assert pipeline.score(X, y) >= 0.95

    def test_rejects_non_binary_labels(self):
        X, _ = blob_data()
        with pytest.raises(ValueError):
            HingePatchClassifier().fit(X, np.full(len(X), 2))


class TestWeaklySupervisedImageDetector:
    def _maps(self, seed=0, n_normal=10, n_anomaly=4, n_test=6):
        rng = np.random.default_rng(seed)
        base = rng.standard_normal(6)
        direction = rng.standard_normal(6)
        direction /= np.linalg.norm(direction)

        def make(anomalous):
            m = base + 0.3 * rng.standard_normal((8, 8, 6))
            if anomalous:
                m[2:5, 2:5] += 5.0 * direction
            return m.astype(np.float32)

        train_maps = [make(False) for _ in range(n_normal)] + [
            make(True) for _ in range(n_anomaly)
        ]
        train_y = np.array([0] * n_normal + [1] * n_anomaly)
        test_maps = [make(False) for _ in range(n_test)] + [
            make(True) for _ in range(n_test)
        ]
        test_y = np.array([0] * n_test + [1] * n_test)
        return np.stack(train_maps), train_y, np.stack(test_maps), test_y

    def test_fit_and_separate(self):
        train_X, train_y, test_X, test_y = self._maps()
        detector = WeaklySupervisedImageDetector(
            patch_size=3, epochs=30, batch_size=128, learning_rate=1e-3, seed=0
        )
        detector.fit(train_X, train_y)
        scores = detector.decision_function(test_X)
        assert rank_auroc(test_y, scores) >= 0.9

    def test_anomaly_maps_shape(self):
        train_X, train_y, test_X, _ = self._maps(seed=1)
        detector = WeaklySupervisedImageDetector(
            patch_size=3, epochs=5, batch_size=128, seed=0
        ).fit(train_X, train_y)
        grids = detector.anomaly_maps(test_X[:2])
        assert len(grids) == 2
        assert grids[0].shape == (8, 8)

    def test_ablation_switches(self):
        train_X, train_y, test_X, test_y = self._maps(seed=2)
        for mining, mixing in ((False, True), (True, False), (False, False)):
            detector = WeaklySupervisedImageDetector(
                patch_size=3, mining=mining, mixing=mixing,
                epochs=10, batch_size=128, seed=0,
            ).fit(train_X, train_y)
            scores = detector.decision_function(test_X)
            assert np.all(np.isfinite(scores))

    def test_needs_both_classes(self):
        train_X, train_y, _, _ = self._maps(seed=3)
        with pytest.raises(ValueError):
            WeaklySupervisedImageDetector().fit(train_X, np.zeros(len(train_y), dtype=int))

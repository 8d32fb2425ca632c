"""Shared fixtures: synthetic datasets and a trained reference pipeline."""

from types import SimpleNamespace

import numpy as np
import pytest

from wsad import (
    AggregationConfig,
    SynthConfig,
    TrainConfig,
    build_bank,
    generate_synthetic,
    linear_mix,
    mine,
    read_feature_map,
    score_image,
    train,
)
from wsad.aggregation import extract_patch_sets


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A fast, strongly separable dataset for plumbing-level tests."""
    root = tmp_path_factory.mktemp("tiny")
    config = SynthConfig(
        seed=7,
        n_normal_train=12,
        n_anomaly_train=4,
        n_normal_test=8,
        n_anomaly_test=8,
        height=8,
        width=8,
        channels=8,
        blob_height=3,
        blob_width=3,
        shift_magnitude=6.0,
        noise_sigma=0.3,
    )
    manifest = generate_synthetic(config, root)
    return SimpleNamespace(config=config, manifest=manifest, root=root)


@pytest.fixture(scope="session")
def bench_dataset(tmp_path_factory):
    """The desk-scale benchmark dataset (the SynthConfig defaults)."""
    root = tmp_path_factory.mktemp("bench")
    config = SynthConfig(seed=0)
    manifest = generate_synthetic(config, root)
    return SimpleNamespace(config=config, manifest=manifest, root=root)


@pytest.fixture(scope="session")
def bench_pipeline(bench_dataset):
    """Full pipeline artifacts on the benchmark dataset (built once)."""
    manifest = bench_dataset.manifest
    agg = AggregationConfig()
    bank = build_bank(manifest, agg)
    anomaly_sets = extract_patch_sets(manifest, manifest.train_anomaly(), agg)
    mined = mine(bank, anomaly_sets, 0.2)
    augmented = linear_mix(mined, bank, seed=0)
    model = train(bank.features, augmented.features_f32(), TrainConfig(seed=0))
    test_sets = extract_patch_sets(manifest, manifest.test(), agg)
    scored = []
    for entry, patches in zip(manifest.test(), test_sets):
        amap, result = score_image(model, patches)
        result.label = entry.label
        scored.append((entry, amap, result))
    masks = {
        e.id: read_feature_map(manifest.resolve(e.mask_path))[:, :, 0] > 0.5
        for e in manifest.entries
        if e.mask_path
    }
    return SimpleNamespace(
        dataset=bench_dataset,
        manifest=manifest,
        agg=agg,
        bank=bank,
        anomaly_sets=anomaly_sets,
        mined=mined,
        augmented=augmented,
        model=model,
        test_sets=test_sets,
        scored=scored,
        masks=masks,
    )


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation; marks every cell whose window overlaps the mask."""
    out = np.zeros_like(mask, dtype=bool)
    for y, x in zip(*np.nonzero(mask)):
        out[max(0, y - radius) : y + radius + 1, max(0, x - radius) : x + radius + 1] = True
    return out

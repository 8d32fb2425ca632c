"""Anomaly feature mining and linear-mixing augmentation.

Anomaly training images are mostly normal tissue, so their patch features are
first scored by nearest-bank distance and only the highest-scoring fraction
(the retention rate) is kept as mined anomaly evidence.  The scarce mined
features are then augmented by convex interpolation against bank rows until
the anomaly set matches the normal set in size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import PatchSet
from .bank import NormalBank, nearest_distances
from .feature_io import read_feature_map, write_feature_map

__all__ = [
    "MinedAnomalySet",
    "AugmentedAnomalySet",
    "NoAnomalyImagesError",
    "EmptyRetentionError",
    "retention_count",
    "mine",
    "take_all_patches",
    "linear_mix",
    "save_mined",
    "load_mined",
    "save_augmented",
    "load_augmented",
]


class NoAnomalyImagesError(ValueError):
    """Mining was requested but no anomaly training images exist (K = 0)."""


class EmptyRetentionError(ValueError):
    """The retention rate rounds down to an empty mined set."""


@dataclass
class MinedAnomalySet:
    """Highest-scoring anomaly patch features with provenance.

    Rows are sorted by score descending; ties keep their original order
    (earlier manifest image first, then row-major position), so selections
    for growing retention rates are nested.
    """

    features: np.ndarray  # (n_kept, channels) float32
    scores: np.ndarray  # (n_kept,) float64, non-increasing
    origins: list[tuple[str, int, int]]
    retention_rate: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not (len(self.origins) == self.features.shape[0] == self.scores.shape[0]):
            raise ValueError("features, scores and origins must have matching lengths")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


@dataclass
class AugmentedAnomalySet:
    """Mined features plus mixed rows filling up to the target size.

    Unmixed originals carry alpha 1.0 and a null normal index.  Mixed rows
    are stored in float64 so the stored row, its provenance pair and its
    alpha satisfy the interpolation identity to full precision; persisting
    to WSFX narrows to float32.
    """

    features: np.ndarray  # (n_rows, channels) float64
    alphas: np.ndarray  # (n_rows,) float64
    pair_indices: list[tuple[int, int | None]]  # (mined row, bank row or None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if not (len(self.pair_indices) == self.features.shape[0] == self.alphas.shape[0]):
            raise ValueError("features, alphas and pair_indices must have matching lengths")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    def features_f32(self) -> np.ndarray:
        """The float32 view used for training and persistence."""
        return self.features.astype(np.float32)


def retention_count(rate: float, n_total: int) -> int:
    """Number of rows kept: floor(rate * n_total).

    Products like 0.7 * 200 land a few ulps below the exact integer, so the
    floor is taken with a tiny positive nudge to honor the mathematical
    value of the rate.
    """
    return int(math.floor(rate * n_total + 1e-9))


def mine(
    bank: NormalBank,
    anomaly_patches: Sequence[PatchSet],
    rate: float,
) -> MinedAnomalySet:
    """Keep the top floor(rate * total) anomaly patches by nearest-bank distance.

    Args:
        bank: normal feature bank used for scoring.
        anomaly_patches: patch sets of the anomaly training images, in
            manifest order.
        rate: retention rate in (0, 1].

    Raises:
        NoAnomalyImagesError: no anomaly patch sets were given; callers
            should fall back to distance-only scoring.
        EmptyRetentionError: rate * total rounds down to zero rows.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"retention rate must be in (0, 1], got {rate}")
    if len(anomaly_patches) == 0:
        raise NoAnomalyImagesError(
            "no anomaly training images; use distance-only scoring instead"
        )
    features = np.concatenate([ps.features for ps in anomaly_patches], axis=0)
    origins = [o for ps in anomaly_patches for o in ps.origins()]
    scores = nearest_distances(bank, features)

    n_total = features.shape[0]
    n_keep = retention_count(rate, n_total)
    if n_keep < 1:
        raise EmptyRetentionError(
            f"retention rate {rate} over {n_total} features yields an empty set"
        )
    # Stable sort on descending score preserves original order within ties.
    order = np.argsort(-scores, kind="stable")[:n_keep]
    return MinedAnomalySet(
        features=features[order].copy(),
        scores=scores[order],
        origins=[origins[i] for i in order],
        retention_rate=float(rate),
    )


def take_all_patches(anomaly_patches: Sequence[PatchSet]) -> MinedAnomalySet:
    """The no-mining ablation: every anomaly patch kept, in original order.

    Scores are not computed (no bank consultation) and are recorded as zeros
    to keep the sidecar schema uniform.
    """
    if len(anomaly_patches) == 0:
        raise NoAnomalyImagesError(
            "no anomaly training images; use distance-only scoring instead"
        )
    features = np.concatenate([ps.features for ps in anomaly_patches], axis=0)
    origins = [o for ps in anomaly_patches for o in ps.origins()]
    return MinedAnomalySet(
        features=features.copy(),
        scores=np.zeros(features.shape[0], dtype=np.float64),
        origins=origins,
        retention_rate=1.0,
    )


def linear_mix(
    mined: MinedAnomalySet,
    bank: NormalBank,
    target_size: int | None = None,
    alpha_low: float = 0.1,
    alpha_high: float = 1.0,
    seed: int = 0,
) -> AugmentedAnomalySet:
    """Grow the mined set to ``target_size`` rows by convex interpolation.

    Every mined row is kept verbatim (alpha 1.0).  Each additional row draws
    a mined row and a bank row independently and uniformly, draws
    alpha ~ U[alpha_low, alpha_high], and stores
    alpha * mined + (1 - alpha) * normal.  The default target is the bank
    size, which balances the two class populations exactly.

    Raises:
        ValueError: target_size < mined size (mined features are never
            discarded), or an invalid alpha range.
    """
    if mined.n_rows == 0:
        raise ValueError("mined set is empty")
    if not 0 < alpha_low <= alpha_high <= 1:
        raise ValueError(
            f"alpha range must satisfy 0 < low <= high <= 1, got [{alpha_low}, {alpha_high}]"
        )
    if bank.channel_count != mined.features.shape[1]:
        raise ValueError(
            f"bank has {bank.channel_count} channels, mined set has {mined.features.shape[1]}"
        )
    if target_size is None:
        target_size = bank.n_rows
    if target_size < mined.n_rows:
        raise ValueError(
            f"target_size {target_size} would discard mined features ({mined.n_rows} rows)"
        )

    n_mixed = target_size - mined.n_rows
    rng = np.random.default_rng(seed)
    mined_idx = rng.integers(0, mined.n_rows, size=n_mixed)
    bank_idx = rng.integers(0, bank.n_rows, size=n_mixed)
    alphas = rng.uniform(alpha_low, alpha_high, size=n_mixed)

    anomalies = mined.features[mined_idx].astype(np.float64)
    normals = bank.features[bank_idx].astype(np.float64)
    mixed = alphas[:, None] * anomalies + (1.0 - alphas[:, None]) * normals

    features = np.concatenate([mined.features.astype(np.float64), mixed], axis=0)
    all_alphas = np.concatenate([np.ones(mined.n_rows), alphas])
    pairs: list[tuple[int, int | None]] = [(i, None) for i in range(mined.n_rows)]
    pairs += [(int(a), int(b)) for a, b in zip(mined_idx, bank_idx)]
    return AugmentedAnomalySet(features=features, alphas=all_alphas, pair_indices=pairs)


def save_mined(mined: MinedAnomalySet, path) -> None:
    """Persist as (rows, 1, channels) WSFX plus a score/origin sidecar."""
    path = Path(path)
    write_feature_map(mined.features[:, None, :], path)
    sidecar = path.with_suffix(path.suffix + ".meta.jsonl")
    with open(sidecar, "w", encoding="utf-8") as f:
        f.write(json.dumps({"retention_rate": mined.retention_rate}) + "\n")
        for score, (image_id, h, w) in zip(mined.scores, mined.origins):
            f.write(
                json.dumps({"score": float(score), "image_id": image_id, "h": h, "w": w}) + "\n"
            )


def load_mined(path) -> MinedAnomalySet:
    path = Path(path)
    features = read_feature_map(path)[:, 0, :]
    sidecar = path.with_suffix(path.suffix + ".meta.jsonl")
    scores, origins, rate = [], [], 1.0
    with open(sidecar, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        rate = float(header["retention_rate"])
        for line in f:
            line = line.strip()
            if line:
                obj = json.loads(line)
                scores.append(obj["score"])
                origins.append((obj["image_id"], obj["h"], obj["w"]))
    return MinedAnomalySet(
        features=features,
        scores=np.asarray(scores, dtype=np.float64),
        origins=origins,
        retention_rate=rate,
    )


def save_augmented(augmented: AugmentedAnomalySet, path) -> None:
    """Persist as float32 WSFX plus an alpha/pair sidecar (narrowing from f64)."""
    path = Path(path)
    write_feature_map(augmented.features_f32()[:, None, :], path)
    sidecar = path.with_suffix(path.suffix + ".meta.jsonl")
    with open(sidecar, "w", encoding="utf-8") as f:
        for alpha, (a_idx, n_idx) in zip(augmented.alphas, augmented.pair_indices):
            f.write(
                json.dumps({"alpha": float(alpha), "anomaly_row": a_idx, "normal_row": n_idx})
                + "\n"
            )


def load_augmented(path) -> AugmentedAnomalySet:
    path = Path(path)
    features = read_feature_map(path)[:, 0, :].astype(np.float64)
    sidecar = path.with_suffix(path.suffix + ".meta.jsonl")
    alphas, pairs = [], []
    with open(sidecar, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                obj = json.loads(line)
                alphas.append(obj["alpha"])
                n_idx = obj["normal_row"]
                pairs.append((obj["anomaly_row"], None if n_idx is None else int(n_idx)))
    return AugmentedAnomalySet(
        features=features,
        alphas=np.asarray(alphas, dtype=np.float64),
        pair_indices=pairs,
    )

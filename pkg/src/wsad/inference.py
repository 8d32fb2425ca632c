"""Anomaly map and image score computation for test images, plus rendering.

The anomaly map of a test image is simply the discriminator output at every
patch; the image-level score is the map's maximum.  The normal bank and the
augmented anomaly set play no role at test time.  Rendering (upsampling,
blurring, normalization) is a pure visualization concern and never feeds back
into scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregation import PatchSet, resize_bilinear
from .discriminator import Discriminator

__all__ = [
    "AnomalyMap",
    "ImageResult",
    "score_image",
    "render_map",
    "write_pgm",
    "save_scores",
    "load_scores",
]


@dataclass
class AnomalyMap:
    """Raw per-patch anomaly scores of one image."""

    image_id: str
    grid: np.ndarray  # (height, width) float32

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float32)
        if self.grid.ndim != 2:
            raise ValueError(f"grid must be 2-D, got shape {self.grid.shape}")


@dataclass
class ImageResult:
    """Image-level outcome: the maximum of the raw anomaly map."""

    image_id: str
    score: float
    label: int | None = None


def score_image(model: Discriminator, patches: PatchSet) -> tuple[AnomalyMap, ImageResult]:
    """Discriminator scores for every patch plus the image-level maximum."""
    if patches.channels != model.input_dim:
        raise ValueError(
            f"model expects {model.input_dim} channels, patches have {patches.channels}"
        )
    scores = model.forward(patches.features.astype(np.float64))
    grid = scores.astype(np.float32).reshape(patches.height, patches.width)
    amap = AnomalyMap(image_id=patches.image_id, grid=grid)
    result = ImageResult(image_id=patches.image_id, score=float(grid.max()))
    return amap, result


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication."""
    if sigma <= 0:
        return img
    k = _gaussian_kernel(sigma)
    radius = (len(k) - 1) // 2
    padded = np.pad(img, ((radius, radius), (0, 0)), mode="edge")
    rows = np.zeros_like(img)
    for i, w in enumerate(k):
        rows += w * padded[i : i + img.shape[0], :]
    padded = np.pad(rows, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(img)
    for j, w in enumerate(k):
        out += w * padded[:, j : j + img.shape[1]]
    return out


def render_map(
    amap: AnomalyMap,
    path=None,
    target_resolution: tuple[int, int] | None = None,
    smoothing_sigma: float = 4.0,
) -> np.ndarray:
    """Render an anomaly map for inspection.

    Bilinearly upsamples the raw grid to ``target_resolution`` (defaults to
    the grid size), applies an optional Gaussian blur in upsampled pixels,
    min-max normalizes to [0, 1] (an all-equal map renders as zeros), and
    optionally writes a binary PGM.  Image scores always come from the raw
    grid, never from this rendering.

    Returns:
        (height, width) float64 array of values in [0, 1].
    """
    grid = amap.grid
    if target_resolution is None:
        th, tw = grid.shape
    else:
        th, tw = target_resolution
    if th < 1 or tw < 1:
        raise ValueError(f"target resolution must be positive, got {(th, tw)}")
    if th < grid.shape[0] or tw < grid.shape[1]:
        raise ValueError(
            f"target resolution {(th, tw)} is smaller than the grid {grid.shape}"
        )

    up = resize_bilinear(grid[:, :, None], th, tw)[:, :, 0].astype(np.float64)
    up = _gaussian_blur(up, smoothing_sigma)
    lo, hi = float(up.min()), float(up.max())
    if hi > lo:
        out = (up - lo) / (hi - lo)
    else:
        out = np.zeros_like(up)
    if path is not None:
        write_pgm((out * 255.0).round().astype(np.uint8), path)
    return out


def write_pgm(img: np.ndarray, path) -> None:
    """Write a 2-D uint8 array as a binary (P5) portable graymap."""
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM output must be 2-D")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def save_scores(results: list[ImageResult], path) -> None:
    """Image results as JSON lines (id, label, score)."""
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            f.write(
                json.dumps({"id": r.image_id, "label": r.label, "score": r.score}) + "\n"
            )


def load_scores(path) -> list[ImageResult]:
    results = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                obj = json.loads(line)
                label = obj.get("label")
                results.append(
                    ImageResult(
                        image_id=obj["id"],
                        score=float(obj["score"]),
                        label=None if label is None else int(label),
                    )
                )
    return results

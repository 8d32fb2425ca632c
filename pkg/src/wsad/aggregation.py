"""Patch feature extraction: multi-scale alignment and neighborhood aggregation.

Raw per-layer feature maps are resized to a common resolution, concatenated
along channels, and locally averaged so each patch feature summarizes a
(patch_size x patch_size) neighborhood.  Windows are clipped at the map
border and averaged over the valid positions only, which avoids the bias
zero-padding would introduce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .feature_io import DatasetManifest, ManifestEntry, read_feature_map
from .validation import check_feature_map

__all__ = [
    "AggregationConfig",
    "PatchSet",
    "resize_bilinear",
    "neighborhood_mean",
    "align_multiscale",
    "aggregate",
    "extract_patch_set",
]

# Separator for multi-layer feature references in a manifest feature_path.
LAYER_PATH_SEPARATOR = ";"


@dataclass
class AggregationConfig:
    """Settings for turning raw feature maps into patch feature sets.

    Attributes:
        patch_size: odd neighborhood edge length for local averaging.
        layer_indices: which of the supplied layers to align and concatenate.
        target_height / target_width: common spatial resolution; None means
            use the first selected layer's resolution.
    """

    patch_size: int = 5
    layer_indices: tuple[int, ...] = (0,)
    target_height: int | None = None
    target_width: int | None = None

    def __post_init__(self):
        self.layer_indices = tuple(self.layer_indices)
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be a positive odd integer, got {self.patch_size}")
        if len(self.layer_indices) == 0:
            raise ValueError("layer_indices must not be empty")
        if (self.target_height is None) != (self.target_width is None):
            raise ValueError("target_height and target_width must be set together")
        if self.target_height is not None and (self.target_height < 1 or self.target_width < 1):
            raise ValueError("target dimensions must be positive")


@dataclass
class PatchSet:
    """All patch features of one image, row-major over the (h, w) grid."""

    image_id: str
    height: int
    width: int
    features: np.ndarray  # (height * width, channels) float32

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or self.features.shape[0] != self.height * self.width:
            raise ValueError(
                f"features must have shape ({self.height * self.width}, channels), "
                f"got {self.features.shape}"
            )

    @property
    def n_patches(self) -> int:
        return self.features.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def origin(self, row: int) -> tuple[str, int, int]:
        """(image id, h, w) of the patch stored at ``row``."""
        return (self.image_id, row // self.width, row % self.width)

    def origins(self) -> list[tuple[str, int, int]]:
        return [self.origin(i) for i in range(self.n_patches)]

    def grid(self) -> np.ndarray:
        """The features reshaped back to (height, width, channels)."""
        return self.features.reshape(self.height, self.width, -1)


def resize_bilinear(arr: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Bilinearly resize an (H, W, C) map to (out_height, out_width, C).

    Sample centers follow the half-pixel convention
    (src = (i + 0.5) * in/out - 0.5) with edge clamping.  A same-size resize
    returns a bitwise copy.
    """
    arr = check_feature_map(arr, "resize input")
    in_h, in_w, _ = arr.shape
    if out_height < 1 or out_width < 1:
        raise ValueError("target dimensions must be positive")
    if (in_h, in_w) == (out_height, out_width):
        return arr.copy()

    def axis_coords(n_in: int, n_out: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    h_lo, h_hi, h_t = axis_coords(in_h, out_height)
    w_lo, w_hi, w_t = axis_coords(in_w, out_width)

    data = arr.astype(np.float64)
    top = data[h_lo][:, w_lo] * (1.0 - w_t)[None, :, None] + data[h_lo][:, w_hi] * w_t[None, :, None]
    bot = data[h_hi][:, w_lo] * (1.0 - w_t)[None, :, None] + data[h_hi][:, w_hi] * w_t[None, :, None]
    out = top * (1.0 - h_t)[:, None, None] + bot * h_t[:, None, None]
    return out.astype(np.float32)


def neighborhood_mean(arr: np.ndarray, patch_size: int) -> np.ndarray:
    """Mean over the clipped (patch_size x patch_size) window around each cell.

    Sums are accumulated in float64 via an integral image and divided by the
    number of valid (in-bounds) positions, then stored as float32.
    patch_size == 1 is the identity.
    """
    arr = check_feature_map(arr, "aggregation input")
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"patch_size must be a positive odd integer, got {patch_size}")
    if patch_size == 1:
        return arr.copy()

    h, w, c = arr.shape
    k = patch_size // 2
    # Padded integral image: integral[i, j] = sum of arr[:i, :j].
    integral = np.zeros((h + 1, w + 1, c), dtype=np.float64)
    np.cumsum(arr, axis=0, dtype=np.float64, out=integral[1:, 1:])
    np.cumsum(integral[1:, 1:], axis=1, out=integral[1:, 1:])

    rows = np.arange(h)
    cols = np.arange(w)
    r0 = np.maximum(rows - k, 0)
    r1 = np.minimum(rows + k, h - 1) + 1
    c0 = np.maximum(cols - k, 0)
    c1 = np.minimum(cols + k, w - 1) + 1

    sums = (
        integral[r1][:, c1]
        - integral[r0][:, c1]
        - integral[r1][:, c0]
        + integral[r0][:, c0]
    )
    counts = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return (sums / counts[:, :, None]).astype(np.float32)


def align_multiscale(layers: Sequence[np.ndarray], config: AggregationConfig) -> np.ndarray:
    """Resize the selected layers to a common resolution and stack channels.

    The target resolution defaults to the first selected layer's; the output
    channel count is the sum over selected layers.  A single layer already at
    the target resolution passes through bitwise unchanged.
    """
    if len(layers) == 0:
        raise ValueError("layers must not be empty")
    try:
        selected = [check_feature_map(layers[i], f"layer {i}") for i in config.layer_indices]
    except IndexError:
        raise ValueError(
            f"layer_indices {config.layer_indices} out of range for {len(layers)} layers"
        ) from None
    if config.target_height is not None:
        th, tw = config.target_height, config.target_width
    else:
        th, tw = selected[0].shape[:2]
    resized = [resize_bilinear(layer, th, tw) for layer in selected]
    if len(resized) == 1:
        return resized[0]
    return np.concatenate(resized, axis=2)


def aggregate(arr: np.ndarray, config: AggregationConfig, image_id: str = "") -> PatchSet:
    """Aggregate an aligned map into a PatchSet of neighborhood-mean features."""
    pooled = neighborhood_mean(arr, config.patch_size)
    h, w, c = pooled.shape
    return PatchSet(image_id=image_id, height=h, width=w, features=pooled.reshape(h * w, c))


def extract_patch_set(
    entry: ManifestEntry,
    config: AggregationConfig,
    root: Path | str,
) -> PatchSet:
    """Read an entry's feature file(s), align, aggregate, and tag origins.

    A multi-layer entry joins its layer files with ';' in feature_path; the
    common single-layer case is one path.
    """
    root = Path(root)
    paths = [p for p in entry.feature_path.split(LAYER_PATH_SEPARATOR) if p]
    layers = [read_feature_map(root / p) for p in paths]
    aligned = align_multiscale(layers, config)
    return aggregate(aligned, config, image_id=entry.id)


def extract_patch_sets(
    manifest: DatasetManifest,
    entries: Sequence[ManifestEntry],
    config: AggregationConfig,
) -> list[PatchSet]:
    """extract_patch_set over several entries, resolving against the manifest root."""
    return [extract_patch_set(e, config, manifest.root) for e in entries]

"""Feature-map file format, dataset manifest, and synthetic dataset generator.

Feature maps are dense (height, width, channels) float32 tensors stored in the
WSFX binary format:

    offset  size  field
    0       4     magic "WSFX"
    4       2     version, u16 little-endian (currently 1)
    6       1     dtype code (0 = float32 little-endian)
    7       1     reserved (0)
    8       4     height, u32 little-endian
    12      4     width, u32 little-endian
    16      4     channels, u32 little-endian
    20      ...   height*width*channels float32 values, (h, w, c) order,
                  channel index fastest

Read-after-write is bit-identical.  The dataset manifest is a JSON-lines file
(one object per line: id, split, label, feature_path, mask_path) whose paths
are relative to the dataset root directory.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import check_feature_map

__all__ = [
    "WSFX_MAGIC",
    "WSFX_VERSION",
    "WSFX_HEADER_SIZE",
    "FeatureFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "UnsupportedDtypeError",
    "TruncatedPayloadError",
    "ManifestError",
    "SynthConfigError",
    "ManifestEntry",
    "DatasetManifest",
    "SynthConfig",
    "write_feature_map",
    "read_feature_map",
    "generate_synthetic",
    "SPLIT_TRAIN_NORMAL",
    "SPLIT_TRAIN_ANOMALY",
    "SPLIT_TEST",
]

WSFX_MAGIC = b"WSFX"
WSFX_VERSION = 1
_WSFX_DTYPE_F32 = 0
_HEADER_STRUCT = struct.Struct("<4sHBBIII")
WSFX_HEADER_SIZE = _HEADER_STRUCT.size  # 20 bytes

SPLIT_TRAIN_NORMAL = "train-normal"
SPLIT_TRAIN_ANOMALY = "train-anomaly"
SPLIT_TEST = "test"
_VALID_SPLITS = (SPLIT_TRAIN_NORMAL, SPLIT_TRAIN_ANOMALY, SPLIT_TEST)


class FeatureFileError(Exception):
    """Base error for malformed or unreadable feature-map files."""

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


class BadMagicError(FeatureFileError):
    """File does not start with the WSFX magic bytes."""


class UnsupportedVersionError(FeatureFileError):
    """File declares a format version this reader does not understand."""


class UnsupportedDtypeError(FeatureFileError):
    """File declares an element dtype this reader does not understand."""


class TruncatedPayloadError(FeatureFileError):
    """Payload is shorter than the header dimensions require."""


class ManifestError(Exception):
    """Manifest file is malformed or violates split/label semantics."""


class SynthConfigError(ValueError):
    """Synthetic generator configuration is inconsistent."""


def write_feature_map(arr, path) -> None:
    """Write a (height, width, channels) float32 array as a WSFX file.

    Args:
        arr: array-like of shape (height, width, channels); values must be
            finite.
        path: destination file path.
    """
    out = check_feature_map(arr)
    h, w, c = out.shape
    header = _HEADER_STRUCT.pack(WSFX_MAGIC, WSFX_VERSION, _WSFX_DTYPE_F32, 0, h, w, c)
    payload = np.ascontiguousarray(out, dtype="<f4").tobytes()
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as exc:
        raise FeatureFileError(path, f"write failed: {exc}") from exc


def read_feature_map(path) -> np.ndarray:
    """Read a WSFX file back into a (height, width, channels) float32 array.

    Inverse of :func:`write_feature_map`; validates magic, version, dtype and
    payload length before returning.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FeatureFileError(path, f"read failed: {exc}") from exc
    if len(raw) < WSFX_HEADER_SIZE:
        raise TruncatedPayloadError(path, f"file too short for header ({len(raw)} bytes)")
    magic, version, dtype, _, h, w, c = _HEADER_STRUCT.unpack_from(raw, 0)
    if magic != WSFX_MAGIC:
        raise BadMagicError(path, f"bad magic {magic!r}, expected {WSFX_MAGIC!r}")
    if version != WSFX_VERSION:
        raise UnsupportedVersionError(path, f"unsupported version {version}")
    if dtype != _WSFX_DTYPE_F32:
        raise UnsupportedDtypeError(path, f"unsupported dtype code {dtype}")
    expected = h * w * c * 4
    payload = raw[WSFX_HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            path, f"payload has {len(payload)} bytes, header requires {expected}"
        )
    if len(payload) > expected:
        raise FeatureFileError(
            path, f"payload has {len(payload)} bytes of data, header requires {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return data.astype(np.float32)


@dataclass
class ManifestEntry:
    """One image in the dataset index."""

    id: str
    split: str
    label: int
    feature_path: str
    mask_path: str | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "split": self.split,
                "label": self.label,
                "feature_path": self.feature_path,
                "mask_path": self.mask_path,
            },
            sort_keys=True,
        )


@dataclass
class DatasetManifest:
    """Labeled index of the feature files making up one dataset.

    Paths in entries are relative to ``root``.  Training entries carry the
    weak image-level labels: every train-normal entry has label 0 and every
    train-anomaly entry label 1.
    """

    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.root = Path(self.root)
        self.validate()

    def validate(self) -> None:
        for e in self.entries:
            if e.split not in _VALID_SPLITS:
                raise ManifestError(f"entry {e.id!r}: unknown split {e.split!r}")
            if e.label not in (0, 1):
                raise ManifestError(f"entry {e.id!r}: label must be 0 or 1, got {e.label!r}")
            if e.split == SPLIT_TRAIN_NORMAL and e.label != 0:
                raise ManifestError(f"entry {e.id!r}: train-normal entries must have label 0")
            if e.split == SPLIT_TRAIN_ANOMALY and e.label != 1:
                raise ManifestError(f"entry {e.id!r}: train-anomaly entries must have label 1")
        k, n = self.n_anomaly_train, self.n_normal_train
        if k > 0 and k >= n:
            warnings.warn(
                f"manifest has {k} anomaly and {n} normal training images; "
                "weak supervision expects far fewer anomalies than normals",
                UserWarning,
                stacklevel=2,
            )

    @property
    def n_normal_train(self) -> int:
        return sum(1 for e in self.entries if e.split == SPLIT_TRAIN_NORMAL)

    @property
    def n_anomaly_train(self) -> int:
        return sum(1 for e in self.entries if e.split == SPLIT_TRAIN_ANOMALY)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def train_normal(self) -> list[ManifestEntry]:
        return self.split_entries(SPLIT_TRAIN_NORMAL)

    def train_anomaly(self) -> list[ManifestEntry]:
        return self.split_entries(SPLIT_TRAIN_ANOMALY)

    def test(self) -> list[ManifestEntry]:
        return self.split_entries(SPLIT_TEST)

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def save(self, path) -> None:
        """Write the manifest as JSON lines."""
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(e.to_json() + "\n")

    @classmethod
    def load(cls, path, root=None) -> "DatasetManifest":
        """Load a JSON-lines manifest; ``root`` defaults to the file's directory."""
        path = Path(path)
        entries = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                try:
                    entries.append(
                        ManifestEntry(
                            id=obj["id"],
                            split=obj["split"],
                            label=int(obj["label"]),
                            feature_path=obj["feature_path"],
                            mask_path=obj.get("mask_path"),
                        )
                    )
                except KeyError as exc:
                    raise ManifestError(f"{path}:{lineno}: missing field {exc}") from exc
        return cls(entries=entries, root=Path(root) if root is not None else path.parent)


@dataclass
class SynthConfig:
    """Configuration of the synthetic feature-map dataset generator.

    Normal images are a shared per-dataset base vector plus isotropic Gaussian
    noise at every patch.  Anomaly images additionally displace every patch
    inside a uniformly placed blob_height x blob_width rectangle by
    ``shift_magnitude`` along a fixed unit direction, so ground-truth
    separability is controlled analytically by shift_magnitude / noise_sigma.
    """

    seed: int = 0
    n_normal_train: int = 100
    n_anomaly_train: int = 8
    n_normal_test: int = 50
    n_anomaly_test: int = 50
    height: int = 16
    width: int = 16
    channels: int = 32
    blob_height: int = 5
    blob_width: int = 5
    shift_magnitude: float = 3.0
    noise_sigma: float = 0.5

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise SynthConfigError("map dimensions must be positive")
        if min(self.blob_height, self.blob_width) < 1:
            raise SynthConfigError("blob dimensions must be positive")
        if self.blob_height > self.height or self.blob_width > self.width:
            raise SynthConfigError(
                f"blob {self.blob_height}x{self.blob_width} does not fit in a "
                f"{self.height}x{self.width} map"
            )
        if self.shift_magnitude < 0:
            raise SynthConfigError("shift_magnitude must be >= 0")
        if self.noise_sigma < 0:
            raise SynthConfigError("noise_sigma must be >= 0")
        for name in ("n_normal_train", "n_anomaly_train", "n_normal_test", "n_anomaly_test"):
            if getattr(self, name) < 0:
                raise SynthConfigError(f"{name} must be >= 0")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise SynthConfigError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**obj)


def generate_synthetic(config: SynthConfig, out_dir) -> DatasetManifest:
    """Generate a synthetic dataset under ``out_dir`` and return its manifest.

    Feature maps go to ``features/``, ground-truth patch masks for anomaly
    images to ``masks/`` (1.0 inside the planted blob), and the manifest to
    ``manifest.jsonl``.  Generation is fully deterministic given the seed:
    draw order is base vector, shift direction, then images in manifest order.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    base = rng.standard_normal(config.channels)
    direction = rng.standard_normal(config.channels)
    direction /= np.linalg.norm(direction)

    entries: list[ManifestEntry] = []

    def make_map(anomalous: bool):
        noise = rng.standard_normal((config.height, config.width, config.channels))
        data = base + config.noise_sigma * noise
        mask = None
        if anomalous:
            h0 = int(rng.integers(0, config.height - config.blob_height + 1))
            w0 = int(rng.integers(0, config.width - config.blob_width + 1))
            data[h0 : h0 + config.blob_height, w0 : w0 + config.blob_width, :] += (
                config.shift_magnitude * direction
            )
            mask = np.zeros((config.height, config.width, 1), dtype=np.float32)
            mask[h0 : h0 + config.blob_height, w0 : w0 + config.blob_width, 0] = 1.0
        return data.astype(np.float32), mask

    def emit(split: str, label: int, count: int, anomalous: bool, tag: str):
        for i in range(count):
            image_id = f"{tag}-{i:03d}"
            data, mask = make_map(anomalous)
            feature_rel = f"features/{image_id}.wsfx"
            write_feature_map(data, out_dir / feature_rel)
            mask_rel = None
            if mask is not None:
                mask_rel = f"masks/{image_id}.wsfx"
                write_feature_map(mask, out_dir / mask_rel)
            entries.append(
                ManifestEntry(
                    id=image_id,
                    split=split,
                    label=label,
                    feature_path=feature_rel,
                    mask_path=mask_rel,
                )
            )

    emit(SPLIT_TRAIN_NORMAL, 0, config.n_normal_train, False, "train-normal")
    emit(SPLIT_TRAIN_ANOMALY, 1, config.n_anomaly_train, True, "train-anomaly")
    emit(SPLIT_TEST, 0, config.n_normal_test, False, "test-normal")
    emit(SPLIT_TEST, 1, config.n_anomaly_test, True, "test-anomaly")

    manifest = DatasetManifest(entries=entries, root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest

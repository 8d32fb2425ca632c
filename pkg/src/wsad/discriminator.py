"""Patch-feature discriminator: a small MLP trained with a truncated hinge loss.

The discriminator maps a patch feature to a scalar where larger means more
anomalous.  Training pushes normal features below 0 and (augmented) anomaly
features above 1:

    loss = mean_n max(0, D(m_n)) + mean_a max(0, 1 - D(m_a))

which equals the size-normalized double sum over all (normal, anomaly) pairs.
Gradients are written out by hand (the model is two linear layers around a
leaky rectifier), with subgradient 0 at the hinge kinks and the 0.1 slope
branch at the rectifier kink.  A central finite-difference verifier is
provided for checking them.  All parameters and accumulations are float64;
feature inputs are float32.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feature_io import (
    BadMagicError,
    FeatureFileError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .validation import check_patch_matrix

__all__ = [
    "LEAKY_SLOPE",
    "Discriminator",
    "TrainConfig",
    "TrainingDivergedError",
    "forward",
    "loss",
    "gradients",
    "finite_difference_gradients",
    "kink_margin",
    "train",
    "save_model",
    "load_model",
    "save_train_log",
]

LEAKY_SLOPE = 0.1

WSDM_MAGIC = b"WSDM"
WSDM_VERSION = 1
_WSDM_DTYPE_F64 = 1
_WSDM_HEADER = struct.Struct("<4sHBBII")

_PARAM_NAMES = ("w1", "b1", "w2", "b2")


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    """Optimizer settings for discriminator training.

    Batches are balanced: half normal features, half anomaly features.  The
    per-epoch shuffle is reseeded deterministically from (seed, epoch), so a
    fixed seed reproduces training bitwise.
    """

    epochs: int = 40
    batch_size: int = 4096
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ValueError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**obj)


class Discriminator:
    """One-hidden-layer MLP scoring patch features (larger = more anomalous)."""

    def __init__(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: float):
        self.w1 = np.array(w1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.w2 = np.array(w2, dtype=np.float64)
        self.b2 = float(b2)
        hidden, inputs = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise ValueError("parameter shapes are inconsistent")
        self._check_finite()
        self.train_history: list[float] = []

    def _check_finite(self):
        for name in _PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"parameter {name} contains non-finite values")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int | None = None, seed: int = 0):
        """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
        if input_dim < 1:
            raise ValueError("input_dim must be positive")
        if hidden_dim is None:
            hidden_dim = input_dim
        if hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        rng = np.random.default_rng(_seed_sequence(seed, 0))
        lim1 = 1.0 / math.sqrt(input_dim)
        lim2 = 1.0 / math.sqrt(hidden_dim)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(hidden_dim, input_dim)),
            b1=rng.uniform(-lim1, lim1, size=hidden_dim),
            w2=rng.uniform(-lim2, lim2, size=hidden_dim),
            b2=rng.uniform(-lim2, lim2),
        )

    def forward(self, x: np.ndarray):
        """Score one feature vector (returns float) or a batch (returns array)."""
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.input_dim:
            raise ValueError(f"expected input of dimension {self.input_dim}, got shape {np.shape(x)}")
        z = arr @ self.w1.T + self.b1
        a = np.where(z > 0, z, LEAKY_SLOPE * z)
        s = a @ self.w2 + self.b2
        return float(s[0]) if single else s

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2, np.array([self.b2])]
        )

    def set_flat_parameters(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        h, d = self.w1.shape
        if theta.shape != (h * d + h + h + 1,):
            raise ValueError("flat parameter vector has wrong length")
        i = 0
        self.w1 = theta[i : i + h * d].reshape(h, d).copy(); i += h * d
        self.b1 = theta[i : i + h].copy(); i += h
        self.w2 = theta[i : i + h].copy(); i += h
        self.b2 = float(theta[i])


def _seed_sequence(*parts: int) -> np.random.SeedSequence:
    # Mask to unsigned 64-bit so negative user seeds stay valid entropy.
    return np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])


def forward(model: Discriminator, m: np.ndarray) -> float:
    """Score a single patch feature."""
    return model.forward(np.asarray(m).reshape(-1))


def _hidden(model: Discriminator, X: np.ndarray):
    z = X @ model.w1.T + model.b1
    a = np.where(z > 0, z, LEAKY_SLOPE * z)
    return z, a


def loss(model: Discriminator, normals: np.ndarray, anomalies: np.ndarray) -> float:
    """Decomposed hinge loss: mean_n max(0, D(n)) + mean_a max(0, 1 - D(a))."""
    Xn = check_patch_matrix(normals, n_channels=model.input_dim, name="normal batch")
    Xa = check_patch_matrix(anomalies, n_channels=model.input_dim, name="anomaly batch")
    sn = model.forward(Xn.astype(np.float64))
    sa = model.forward(Xa.astype(np.float64))
    return float(np.mean(np.maximum(0.0, sn)) + np.mean(np.maximum(0.0, 1.0 - sa)))


def gradients(model: Discriminator, normals: np.ndarray, anomalies: np.ndarray) -> dict:
    """Exact subgradients of :func:`loss` for every parameter.

    Hinge kinks contribute subgradient 0 (the hinge must be strictly
    violated to be active); the rectifier at exactly 0 takes the 0.1 branch.

    Returns:
        dict with keys w1, b1, w2 shaped like the parameters and a float b2.
    """
    Xn = check_patch_matrix(normals, n_channels=model.input_dim, name="normal batch").astype(
        np.float64
    )
    Xa = check_patch_matrix(anomalies, n_channels=model.input_dim, name="anomaly batch").astype(
        np.float64
    )
    _, grads = _loss_and_gradients(model, Xn, Xa)
    grads["b2"] = float(grads["b2"][0])
    return grads


def finite_difference_gradients(
    model: Discriminator,
    normals: np.ndarray,
    anomalies: np.ndarray,
    step: float = 1e-5,
) -> dict:
    """Central-difference gradient estimate, for verifying :func:`gradients`."""
    theta = model.flat_parameters()
    probe = Discriminator(model.w1, model.b1, model.w2, model.b2)
    flat = np.zeros_like(theta)
    for i in range(theta.size):
        shifted = theta.copy()
        shifted[i] = theta[i] + step
        probe.set_flat_parameters(shifted)
        upper = loss(probe, normals, anomalies)
        shifted[i] = theta[i] - step
        probe.set_flat_parameters(shifted)
        lower = loss(probe, normals, anomalies)
        flat[i] = (upper - lower) / (2.0 * step)
    h, d = model.w1.shape
    return {
        "w1": flat[: h * d].reshape(h, d),
        "b1": flat[h * d : h * d + h],
        "w2": flat[h * d + h : h * d + 2 * h],
        "b2": float(flat[-1]),
    }


def kink_margin(model: Discriminator, normals: np.ndarray, anomalies: np.ndarray) -> float:
    """Smallest distance of any sample to a loss or activation kink.

    Used to exclude kink-adjacent samples from finite-difference checks,
    where the one-sided derivative makes the comparison meaningless.
    """
    # Same float32 input canonicalization as loss()/gradients().
    Xn = check_patch_matrix(normals, n_channels=model.input_dim).astype(np.float64)
    Xa = check_patch_matrix(anomalies, n_channels=model.input_dim).astype(np.float64)
    zn, _ = _hidden(model, Xn)
    za, _ = _hidden(model, Xa)
    sn = model.forward(Xn)
    sa = model.forward(Xa)
    return float(
        min(
            np.abs(zn).min(),
            np.abs(za).min(),
            np.abs(sn).min(),
            np.abs(1.0 - sa).min(),
        )
    )


def _cycled_permutation(rng: np.random.Generator, n: int, total: int) -> np.ndarray:
    """Concatenation of fresh permutations of range(n), truncated to ``total``."""
    reps = -(-total // n)
    chunks = [rng.permutation(n) for _ in range(reps)]
    return np.concatenate(chunks)[:total]


def train(
    bank,
    augmented,
    config: TrainConfig | None = None,
    hidden_dim: int | None = None,
) -> Discriminator:
    """Train a discriminator on bank rows vs. augmented anomaly rows.

    Accepts the NormalBank / AugmentedAnomalySet containers or raw
    (rows, channels) arrays.  Mini-batches hold batch_size/2 samples of each
    class; when the two populations differ in size (the no-mixing ablation),
    the smaller one is cycled through reshuffled permutations so the
    per-batch means keep the loss balanced.

    Raises:
        TrainingDivergedError: a non-finite loss appeared (try a lower
            learning rate).
    """
    config = config or TrainConfig()
    normals = _as_matrix(bank)
    anomalies = _as_matrix(augmented)
    if normals.shape[1] != anomalies.shape[1]:
        raise ValueError(
            f"normal and anomaly features disagree on channels: "
            f"{normals.shape[1]} vs {anomalies.shape[1]}"
        )

    model = Discriminator.initialize(normals.shape[1], hidden_dim=hidden_dim, seed=config.seed)
    history: list[float] = []

    n_n, n_a = normals.shape[0], anomalies.shape[0]
    half = config.batch_size // 2
    steps = max(1, -(-max(n_n, n_a) // half))

    adam_m = {k: np.zeros_like(v) for k, v in _param_dict(model).items()}
    adam_v = {k: np.zeros_like(v) for k, v in _param_dict(model).items()}
    t = 0

    Xn64 = normals.astype(np.float64)
    Xa64 = anomalies.astype(np.float64)

    for epoch in range(config.epochs):
        rng = np.random.default_rng(_seed_sequence(config.seed, 1, epoch))
        norm_order = _cycled_permutation(rng, n_n, steps * half)
        anom_order = _cycled_permutation(rng, n_a, steps * half)
        batch_losses = []
        for s in range(steps):
            sl = slice(s * half, (s + 1) * half)
            xb_n = Xn64[norm_order[sl]]
            xb_a = Xa64[anom_order[sl]]
            batch_loss, grads = _loss_and_gradients(model, xb_n, xb_a)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {s}; "
                    f"try a lower learning rate (current {config.learning_rate})"
                )
            batch_losses.append(batch_loss)
            t += 1
            _adam_step(model, grads, adam_m, adam_v, t, config)
        history.append(float(np.mean(batch_losses)))

    model._check_finite()
    model.train_history = history
    return model


def _as_matrix(obj) -> np.ndarray:
    if isinstance(obj, np.ndarray):
        return check_patch_matrix(obj)
    if hasattr(obj, "features_f32"):
        return check_patch_matrix(obj.features_f32())
    if hasattr(obj, "features"):
        return check_patch_matrix(np.asarray(obj.features, dtype=np.float32))
    raise TypeError(f"cannot extract a feature matrix from {type(obj).__name__}")


def _param_dict(model: Discriminator) -> dict:
    return {"w1": model.w1, "b1": model.b1, "w2": model.w2, "b2": np.array([model.b2])}


def _loss_and_gradients(model: Discriminator, Xn: np.ndarray, Xa: np.ndarray):
    """Single fused forward/backward pass over one balanced batch (float64 inputs)."""
    zn, an = _hidden(model, Xn)
    za, aa = _hidden(model, Xa)
    sn = an @ model.w2 + model.b2
    sa = aa @ model.w2 + model.b2
    batch_loss = float(np.mean(np.maximum(0.0, sn)) + np.mean(np.maximum(0.0, 1.0 - sa)))

    grads = {
        "w1": np.zeros_like(model.w1),
        "b1": np.zeros_like(model.b1),
        "w2": np.zeros_like(model.w2),
        "b2": 0.0,
    }
    for X, z, a, ds in (
        (Xn, zn, an, (sn > 0).astype(np.float64) / Xn.shape[0]),
        (Xa, za, aa, -(sa < 1).astype(np.float64) / Xa.shape[0]),
    ):
        grads["b2"] += float(ds.sum())
        grads["w2"] += a.T @ ds
        dz = (ds[:, None] * model.w2[None, :]) * np.where(z > 0, 1.0, LEAKY_SLOPE)
        grads["w1"] += dz.T @ X
        grads["b1"] += dz.sum(axis=0)
    grads["b2"] = np.array([grads["b2"]])
    return batch_loss, grads


def _adam_step(model, grads, adam_m, adam_v, t, config: TrainConfig):
    params = _param_dict(model)
    for k in params:
        g = grads[k]
        adam_m[k] = config.beta1 * adam_m[k] + (1 - config.beta1) * g
        adam_v[k] = config.beta2 * adam_v[k] + (1 - config.beta2) * (g * g)
        m_hat = adam_m[k] / (1 - config.beta1**t)
        v_hat = adam_v[k] / (1 - config.beta2**t)
        params[k] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    model.b2 = float(params["b2"][0])


def save_model(model: Discriminator, path) -> None:
    """Write parameters as a WSDM file (float64 little-endian payload)."""
    path = Path(path)
    header = _WSDM_HEADER.pack(
        WSDM_MAGIC, WSDM_VERSION, _WSDM_DTYPE_F64, 0, model.input_dim, model.hidden_dim
    )
    payload = model.flat_parameters().astype("<f8").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as exc:
        raise FeatureFileError(path, f"write failed: {exc}") from exc


def load_model(path) -> Discriminator:
    """Inverse of :func:`save_model`; validates magic, version and length."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FeatureFileError(path, f"read failed: {exc}") from exc
    if len(raw) < _WSDM_HEADER.size:
        raise TruncatedPayloadError(path, f"file too short for header ({len(raw)} bytes)")
    magic, version, dtype, _, input_dim, hidden_dim = _WSDM_HEADER.unpack_from(raw, 0)
    if magic != WSDM_MAGIC:
        raise BadMagicError(path, f"bad magic {magic!r}, expected {WSDM_MAGIC!r}")
    if version != WSDM_VERSION:
        raise UnsupportedVersionError(path, f"unsupported version {version}")
    if dtype != _WSDM_DTYPE_F64:
        raise FeatureFileError(path, f"unsupported dtype code {dtype}")
    n_params = hidden_dim * input_dim + 2 * hidden_dim + 1
    expected = n_params * 8
    payload = raw[_WSDM_HEADER.size :]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            path, f"payload has {len(payload)} bytes, header requires {expected}"
        )
    theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    model = Discriminator(
        w1=np.zeros((hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        w2=np.zeros(hidden_dim),
        b2=0.0,
    )
    model.set_flat_parameters(theta)
    return model


def save_train_log(history: list[float], path) -> None:
    """Per-epoch loss as JSON lines (epoch, loss)."""
    with open(path, "w", encoding="utf-8") as f:
        for epoch, value in enumerate(history):
            f.write(json.dumps({"epoch": epoch, "loss": value}) + "\n")

"""Tied-weight single-layer linear autoencoder.

The encoder is one weight matrix W (latent_dim x D); the decoder is W^T.
There are no biases, so the serialized model is exactly
latent_dim * D * 4 bytes of float32 weights plus the two float64 Z-score
constants.  Training is minibatch Adam on the normalized reconstruction
MSE with an analytic tied-weight gradient.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from mlk.errors import ConfigError, DimensionError, TrainingDivergedError
from mlk.qoi import image_nrmse_batch

__all__ = ["AEModel", "TrainConfig", "fit_normalizer", "forward",
           "loss_and_grad", "train", "ae_accuracy"]

STD_FLOOR = 1e-30


@dataclass(frozen=True)
class AEModel:
    weights: np.ndarray   # (latent_dim, D) float32
    norm_mean: float
    norm_std: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim != 2:
            raise ConfigError("weights must be a (latent_dim, D) matrix")
        if not self.norm_std > 0:
            raise ConfigError("normalizer std must be positive")
        object.__setattr__(self, "weights", w)

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    def to_bytes(self) -> bytes:
        return (struct.pack("<dd", self.norm_mean, self.norm_std)
                + self.weights.astype("<f4").tobytes())

    @classmethod
    def from_bytes(cls, raw: bytes, latent_dim: int, input_dim: int):
        mean, std = struct.unpack_from("<dd", raw, 0)
        weights = np.frombuffer(raw, dtype="<f4", offset=16).reshape(
            latent_dim, input_dim)
        return cls(weights=weights.copy(), norm_mean=mean, norm_std=std)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch size and epochs must be >= 1")


def fit_normalizer(images) -> tuple:
    """Z-score constants over all scalar entries of the training selection."""
    images = np.asarray(images, dtype=np.float64)
    if images.size == 0:
        raise ConfigError("cannot fit a normalizer on an empty selection")
    mean = float(np.mean(images))
    std = float(np.std(images))
    return mean, max(std, STD_FLOOR)


def forward(model: AEModel, image: np.ndarray):
    """Encode/decode one image; returns (latent, reconstruction)."""
    flat = np.asarray(image, dtype=np.float64).ravel()
    if flat.size != model.input_dim:
        raise DimensionError(
            f"image has {flat.size} entries, model expects {model.input_dim}")
    xn = (flat - model.norm_mean) / model.norm_std
    z = model.weights @ xn
    recon = (model.weights.T @ z) * model.norm_std + model.norm_mean
    return z, recon.reshape(np.asarray(image).shape)


def encode_batch(model: AEModel, images: np.ndarray) -> np.ndarray:
    """(N, rows, cols) -> (N, latent_dim) latents."""
    flat = images.reshape(images.shape[0], -1)
    xn = (flat - model.norm_mean) / model.norm_std
    return xn @ model.weights.T.astype(np.float64)


def decode_batch(model: AEModel, latents: np.ndarray, shape) -> np.ndarray:
    """(N, latent_dim) -> (N, rows, cols) reconstructions."""
    recon = latents @ model.weights.astype(np.float64)
    recon = recon * model.norm_std + model.norm_mean
    return recon.reshape(latents.shape[0], *shape)


def _normalize_batch(images, mean, std):
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    return (flat - mean) / std


def loss_and_grad(model: AEModel, batch):
    """Normalized-space MSE and its tied-weight gradient dW."""
    if len(batch) == 0:
        raise ConfigError("batch must be non-empty")
    x = _normalize_batch(batch, model.norm_mean, model.norm_std)
    w = model.weights.astype(np.float64)
    return _loss_and_grad_normalized(w, x)


def _loss_and_grad_normalized(w, x):
    b, d = x.shape
    z = x @ w.T                   # (B, L)
    err = z @ w - x               # (B, D)
    mse = float(np.mean(err ** 2))
    # tied weights: both the encoder and decoder paths contribute
    grad = 2.0 / (b * d) * (z.T @ err + (err @ w.T).T @ x)
    return mse, grad


def train(images, config: TrainConfig, init: AEModel | None = None,
          latent_dim: int = 4) -> AEModel:
    """Adam-train a model; fresh Glorot init unless warm-started via init.

    The normalizer is always (re)fit on the supplied training images, so
    incremental training tracks the current data's scale.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim < 2 or len(images) == 0:
        raise ConfigError("need at least one training image")
    mean, std = fit_normalizer(images)
    x = _normalize_batch(images, mean, std)
    n, d = x.shape

    rng = np.random.Generator(np.random.PCG64(config.seed))
    if init is not None:
        latent_dim = init.latent_dim
        if init.input_dim != d:
            raise DimensionError("warm-start model does not match image size")
        w = init.weights.astype(np.float64)
    else:
        bound = np.sqrt(6.0 / (latent_dim + d))
        w = rng.uniform(-bound, bound, size=(latent_dim, d))

    m = np.zeros_like(w)
    v = np.zeros_like(w)
    t = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            xb = x[order[start:start + config.batch_size]]
            mse, grad = _loss_and_grad_normalized(w, xb)
            if not np.isfinite(mse):
                raise TrainingDivergedError(epoch, mse)
            t += 1
            m = config.beta1 * m + (1 - config.beta1) * grad
            v = config.beta2 * v + (1 - config.beta2) * grad ** 2
            mhat = m / (1 - config.beta1 ** t)
            vhat = v / (1 - config.beta2 ** t)
            w -= config.learning_rate * mhat / (np.sqrt(vhat) + config.eps)
    return AEModel(weights=w.astype(np.float32), norm_mean=mean, norm_std=std)


def ae_accuracy(images, model: AEModel, tau: float) -> float:
    """Fraction of images whose AE-only reconstruction meets the bound."""
    if tau <= 0:
        raise ConfigError("tau must be positive")
    images = np.asarray(images, dtype=np.float64)
    latents = encode_batch(model, images)
    recons = decode_batch(model, latents, images.shape[1:])
    per_img = image_nrmse_batch(images, recons)
    return float(np.mean(per_img <= tau))

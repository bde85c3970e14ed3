"""Product quantization of latent vectors.

Each latent dimension gets its own 1D k-means codebook; codes are the
packed nearest-centroid indices (log2(k) bits per component).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mlk import kernels
from mlk.errors import ConfigError, DimensionError, SizeMismatchError

__all__ = ["PQCodebook", "kmeans_1d", "pq_train", "pq_encode", "pq_decode"]

ALLOWED_K = (16, 64, 256)
KMEANS_MAX_ITER = 25


@dataclass(frozen=True)
class PQCodebook:
    centroids: np.ndarray  # (latent_dim, k) float32, each row sorted

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float32)
        if c.ndim != 2:
            raise ConfigError("centroids must be (latent_dim, k)")
        object.__setattr__(self, "centroids", c)

    @property
    def latent_dim(self) -> int:
        return self.centroids.shape[0]

    @property
    def k(self) -> int:
        return self.centroids.shape[1]

    @property
    def bits(self) -> int:
        return int(self.k - 1).bit_length()

    def to_bytes(self) -> bytes:
        return self.centroids.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, latent_dim: int, k: int):
        c = np.frombuffer(raw, dtype="<f4").reshape(latent_dim, k)
        return cls(centroids=c.copy())


def kmeans_1d(values, k: int, seed: int) -> np.ndarray:
    """1D k-means with k-means++ seeding; returns sorted centroids."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ConfigError("cannot cluster an empty value list")
    if k < 1:
        raise ConfigError("k must be >= 1")
    distinct = np.unique(values)
    if distinct.size <= k:
        pad = np.full(k - distinct.size, distinct[-1])
        return np.sort(np.concatenate([distinct, pad]))

    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = np.empty(k)
    centroids[0] = values[rng.integers(values.size)]
    d2 = (values - centroids[0]) ** 2
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i:] = centroids[0]
            break
        centroids[i] = values[rng.choice(values.size, p=d2 / total)]
        d2 = np.minimum(d2, (values - centroids[i]) ** 2)

    assign = _nearest(values, centroids)
    for _ in range(KMEANS_MAX_ITER):
        for j in range(k):
            sel = assign == j
            if np.any(sel):
                centroids[j] = values[sel].mean()
            else:
                # reseed dead clusters at the worst-served point
                far = np.argmax(np.abs(values - centroids[assign]))
                centroids[j] = values[far]
        new_assign = _nearest(values, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return np.sort(centroids)


def _nearest(values, centroids):
    """Index of the nearest centroid; ties go to the lower index."""
    return np.argmin(np.abs(values[:, None] - centroids[None, :]), axis=1)


def pq_train(latents, k: int, seed: int) -> PQCodebook:
    """Independent 1D codebook per latent dimension (column-wise k-means)."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] == 0:
        raise ConfigError("latents must be a non-empty (N, latent_dim) array")
    if k not in ALLOWED_K:
        raise ConfigError(f"k must be one of {ALLOWED_K}, got {k}")
    cents = [kmeans_1d(latents[:, d], k, seed + d)
             for d in range(latents.shape[1])]
    return PQCodebook(centroids=np.array(cents, dtype=np.float32))


def pq_encode(codebook: PQCodebook, latents) -> bytes:
    """Nearest-centroid indices packed into a little-endian bitstream."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != codebook.latent_dim:
        raise DimensionError("latent dimension does not match the codebook")
    cents = codebook.centroids.astype(np.float64)
    idx = np.empty(latents.shape, dtype=np.uint16)
    for d in range(codebook.latent_dim):
        idx[:, d] = _nearest(latents[:, d], cents[d])
    return kernels.pack_indices(idx.reshape(-1), codebook.bits)


def pq_decode(codebook: PQCodebook, packed: bytes, n_latents: int) -> np.ndarray:
    """Exact centroid lookup for packed codes; returns (N, latent_dim) f64."""
    total = n_latents * codebook.latent_dim
    expected = (total * codebook.bits + 7) // 8
    if len(packed) != expected:
        raise SizeMismatchError(
            f"code stream is {len(packed)} bytes, expected {expected}")
    idx = kernels.unpack_indices(packed, total, codebook.bits)
    idx = idx.reshape(n_latents, codebook.latent_dim)
    if idx.size and int(idx.max()) >= codebook.k:
        raise SizeMismatchError("code index out of codebook range")
    cents = codebook.centroids.astype(np.float64)
    out = np.empty((n_latents, codebook.latent_dim), dtype=np.float64)
    for d in range(codebook.latent_dim):
        out[:, d] = cents[d][idx[:, d]]
    return out

import numpy as np
import pytest

from mlk import quantizer as pq
from mlk.errors import ConfigError, DimensionError, SizeMismatchError


def test_kmeans_separated_clusters():
    cents = pq.kmeans_1d([0.0, 0.0, 10.0, 10.0], k=2, seed=0)
    assert np.allclose(cents, [0.0, 10.0])


def test_kmeans_k_at_least_distinct():
    cents = pq.kmeans_1d([1.0, 2.0, 3.0], k=3, seed=0)
    assert np.allclose(cents, [1.0, 2.0, 3.0])
    # fewer distinct values than k: pad while keeping zero error
    cents = pq.kmeans_1d([5.0, 5.0, 7.0], k=4, seed=0)
    assert set(np.unique(cents)) == {5.0, 7.0}
    assert len(cents) == 4


def test_kmeans_empty_input():
    with pytest.raises(ConfigError):
        pq.kmeans_1d([], k=2, seed=0)


def sse(values, cents):
    return float(np.sum((values[:, None] - cents[None, :]).min(axis=1) ** 2))


def test_kmeans_quality_vs_restarts():
    rng = np.random.default_rng(12)
    values = np.concatenate([rng.normal(0, 1, 80), rng.normal(8, 0.5, 60),
                             rng.normal(-5, 2, 60)])
    got = sse(values, pq.kmeans_1d(values, k=4, seed=0))
    best = min(sse(values, pq.kmeans_1d(values, k=4, seed=s))
               for s in range(50))
    assert got <= best * 1.05


def test_kmeans_deterministic():
    rng = np.random.default_rng(3)
    values = rng.normal(size=300)
    a = pq.kmeans_1d(values, 16, seed=9)
    b = pq.kmeans_1d(values, 16, seed=9)
    assert np.array_equal(a, b)


def test_pq_train_identical_latents():
    lat = np.tile([1.5, -2.0, 0.25, 7.0], (20, 1))
    cb = pq.pq_train(lat, k=16, seed=0)
    for d in range(4):
        assert np.float32(lat[0, d]) in cb.centroids[d]
    dec = pq.pq_decode(cb, pq.pq_encode(cb, lat), 20)
    assert np.allclose(dec, lat.astype(np.float32), rtol=1e-6)


def test_pq_train_matches_per_dimension_oracle():
    rng = np.random.default_rng(4)
    lat = np.stack([rng.normal(i * 3, 1, 200) for i in range(4)], axis=1)
    cb = pq.pq_train(lat, k=16, seed=7)
    for d in range(4):
        solo = pq.kmeans_1d(lat[:, d], 16, seed=7 + d)
        assert np.allclose(cb.centroids[d], solo.astype(np.float32))


def test_codebook_serialized_size():
    lat = np.random.default_rng(0).normal(size=(50, 4))
    cb = pq.pq_train(lat, k=16, seed=1)
    assert len(cb.to_bytes()) == 256  # 4 * 16 * 4 bytes
    back = pq.PQCodebook.from_bytes(cb.to_bytes(), 4, 16)
    assert np.array_equal(back.centroids, cb.centroids)
    assert cb.bits == 4


def test_pq_train_validates_k():
    lat = np.zeros((5, 4))
    with pytest.raises(ConfigError):
        pq.pq_train(lat, k=10, seed=0)


def test_encode_nibbles_for_exact_centroids():
    cents = np.arange(16.0)[None, :].repeat(4, axis=0)
    cb = pq.PQCodebook(centroids=cents)
    lat = np.array([[3.0, 3.0, 3.0, 3.0], [10.0, 10.0, 10.0, 10.0]])
    packed = pq.pq_encode(cb, lat)
    assert len(packed) == 4  # 2 bytes per latent at 4 bits x 4 dims
    assert packed == bytes([0x33, 0x33, 0xAA, 0xAA])


def test_encode_tie_breaks_low():
    cb = pq.PQCodebook(centroids=np.array([[0.0, 1.0]] * 1))
    packed = pq.pq_encode(cb, np.array([[0.5]]))
    idx = pq.pq_decode(cb, packed, 1)
    assert idx[0, 0] == 0.0  # equidistant -> lower index -> centroid 0


def test_roundtrip_is_nearest_centroid():
    rng = np.random.default_rng(5)
    lat = rng.normal(size=(300, 4)) * [1, 10, 0.1, 100]
    cb = pq.pq_train(lat, k=64, seed=3)
    dec = pq.pq_decode(cb, pq.pq_encode(cb, lat), 300)
    cents = cb.centroids.astype(np.float64)
    for d in range(4):
        nearest = cents[d][np.argmin(np.abs(lat[:, d, None] - cents[d][None, :]),
                                     axis=1)]
        assert np.array_equal(dec[:, d], nearest)


def test_quantization_error_bound():
    rng = np.random.default_rng(6)
    lat = rng.normal(size=(400, 2))
    cb = pq.pq_train(lat, k=16, seed=1)
    dec = pq.pq_decode(cb, pq.pq_encode(cb, lat), 400)
    for d in range(2):
        cents = np.sort(cb.centroids[d].astype(np.float64))
        half_gap = np.max(np.diff(cents)) / 2
        inside = (lat[:, d] >= cents[0]) & (lat[:, d] <= cents[-1])
        assert np.all(np.abs(lat[inside, d] - dec[inside, d]) <= half_gap + 1e-12)


def test_decode_validates_length():
    cb = pq.PQCodebook(centroids=np.zeros((4, 16), dtype=np.float32))
    with pytest.raises(SizeMismatchError):
        pq.pq_decode(cb, b"\x00\x00\x00", 2)


def test_encode_validates_dims():
    cb = pq.PQCodebook(centroids=np.zeros((4, 16), dtype=np.float32))
    with pytest.raises(DimensionError):
        pq.pq_encode(cb, np.zeros((5, 3)))


def test_zero_latents_roundtrip():
    cb = pq.PQCodebook(centroids=np.zeros((4, 16), dtype=np.float32))
    packed = pq.pq_encode(cb, np.zeros((0, 4)))
    assert packed == b""
    out = pq.pq_decode(cb, b"", 0)
    assert out.shape == (0, 4)

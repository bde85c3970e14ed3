import numpy as np
import pytest

from mlk import autoencoder as ae
from mlk.errors import ConfigError, DimensionError


def test_fit_normalizer_constant_images():
    mean, std = ae.fit_normalizer(np.full((3, 4, 4), 5.0))
    assert mean == 5.0
    assert std == ae.STD_FLOOR


def test_fit_normalizer_two_values():
    imgs = np.array([[[0.0, 2.0]], [[0.0, 2.0]]])
    mean, std = ae.fit_normalizer(imgs)
    assert mean == pytest.approx(1.0)
    assert std == pytest.approx(1.0)


def test_fit_normalizer_matches_two_pass():
    rng = np.random.default_rng(0)
    imgs = rng.lognormal(3, 2, (50, 6, 7))
    mean, std = ae.fit_normalizer(imgs)
    flat = imgs.reshape(-1)
    m2 = flat.sum() / flat.size
    v2 = ((flat - m2) ** 2).sum() / flat.size
    assert mean == pytest.approx(m2, rel=1e-12)
    assert std == pytest.approx(np.sqrt(v2), rel=1e-12)


def test_fit_normalizer_empty():
    with pytest.raises(ConfigError):
        ae.fit_normalizer(np.zeros((0, 4, 4)))


def _model(w, mean=0.0, std=1.0):
    return ae.AEModel(weights=np.asarray(w, dtype=np.float32),
                      norm_mean=mean, norm_std=std)


def test_forward_zero_weights():
    model = _model(np.zeros((2, 6)), mean=3.0, std=2.0)
    z, recon = ae.forward(model, np.arange(6.0).reshape(2, 3))
    assert np.array_equal(z, np.zeros(2))
    assert np.allclose(recon, 3.0)


def test_forward_orthonormal_projection_identity():
    # image in the row space of an orthonormal W reconstructs exactly
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.normal(size=(12, 3)))
    w = q.T  # (3, 12) orthonormal rows
    model = _model(w)
    x = (w.T @ rng.normal(size=3)).reshape(3, 4)
    _, recon = ae.forward(model, x)
    assert np.allclose(recon, x, rtol=1e-5, atol=1e-6)


def test_forward_matches_naive_triple_loop():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(3, 8)).astype(np.float32)
    model = _model(w, mean=0.7, std=1.3)
    img = rng.lognormal(0, 1, (2, 4))
    z, recon = ae.forward(model, img)
    xn = (img.reshape(-1) - 0.7) / 1.3
    wd = w.astype(np.float64)
    z_ref = np.array([sum(wd[k, j] * xn[j] for j in range(8)) for k in range(3)])
    rec_ref = np.array([sum(wd[k, j] * z_ref[k] for k in range(3))
                        for j in range(8)]) * 1.3 + 0.7
    assert np.allclose(z, z_ref, rtol=1e-12)
    assert np.allclose(recon.reshape(-1), rec_ref, rtol=1e-12)


def test_forward_dim_mismatch():
    model = _model(np.zeros((2, 6)))
    with pytest.raises(DimensionError):
        ae.forward(model, np.ones((3, 3)))


def test_loss_and_grad_zero_weights():
    rng = np.random.default_rng(3)
    batch = rng.normal(size=(4, 2, 3))
    model = _model(np.zeros((2, 6)))
    mse, grad = ae.loss_and_grad(model, batch)
    assert mse == pytest.approx(np.mean(batch ** 2))
    assert np.allclose(grad, 0.0)


def test_loss_and_grad_perfect_reconstruction():
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    w = q.T
    batch = (q @ rng.normal(size=(2, 5))).T.reshape(5, 2, 3)
    model = _model(w)
    mse, grad = ae.loss_and_grad(model, batch)
    assert mse < 1e-10
    assert np.max(np.abs(grad)) < 1e-5


def test_gradient_matches_finite_differences():
    # central differences on >= 20 random small instances
    rng = np.random.default_rng(5)
    for trial in range(20):
        d, latent, b = 6, 2, 3
        w64 = rng.normal(scale=0.5, size=(latent, d))
        x = rng.normal(size=(b, d))
        mse, grad = ae._loss_and_grad_normalized(w64, x)
        eps = 1e-6
        for _ in range(6):
            i = rng.integers(latent)
            j = rng.integers(d)
            wp = w64.copy()
            wp[i, j] += eps
            mp, _ = ae._loss_and_grad_normalized(wp, x)
            wm = w64.copy()
            wm[i, j] -= eps
            mm, _ = ae._loss_and_grad_normalized(wm, x)
            fd = (mp - mm) / (2 * eps)
            assert grad[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_train_low_rank_corpus():
    # mixtures of latent_dim fixed basis images are exactly representable
    rng = np.random.default_rng(6)
    basis = rng.normal(size=(4, 30))
    coeffs = rng.normal(size=(600, 4))
    imgs = (coeffs @ basis).reshape(600, 5, 6)
    imgs -= imgs.min()
    cfg = ae.TrainConfig(seed=0, epochs=150, learning_rate=0.003, batch_size=64)
    model = ae.train(imgs, cfg, latent_dim=4)
    mse_final, _ = ae.loss_and_grad(model, imgs)
    rng2 = np.random.Generator(np.random.PCG64(0))
    bound = np.sqrt(6.0 / (4 + 30))
    w0 = rng2.uniform(-bound, bound, size=(4, 30)).astype(np.float32)
    model0 = ae.AEModel(weights=w0, norm_mean=model.norm_mean,
                        norm_std=model.norm_std)
    mse_init, _ = ae.loss_and_grad(model0, imgs)
    assert mse_final <= 1e-4 * mse_init


def test_train_rejects_zero_epochs():
    with pytest.raises(ConfigError):
        ae.TrainConfig(epochs=0)


def test_train_deterministic():
    rng = np.random.default_rng(7)
    imgs = rng.lognormal(0, 1, (80, 4, 5))
    cfg = ae.TrainConfig(seed=11, epochs=5)
    a = ae.train(imgs, cfg, latent_dim=3)
    b = ae.train(imgs, cfg, latent_dim=3)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert (a.norm_mean, a.norm_std) == (b.norm_mean, b.norm_std)


def test_train_incremental_warm_start_refits_normalizer():
    rng = np.random.default_rng(8)
    imgs1 = rng.lognormal(0, 1, (60, 4, 5))
    imgs2 = imgs1 * 100.0
    cfg = ae.TrainConfig(seed=1, epochs=3)
    m1 = ae.train(imgs1, cfg, latent_dim=2)
    m2 = ae.train(imgs2, ae.TrainConfig(seed=1, epochs=2), init=m1)
    assert m2.latent_dim == 2
    assert m2.norm_mean == pytest.approx(100 * m1.norm_mean, rel=1e-12)


def test_encode_linearity_in_normalized_space():
    rng = np.random.default_rng(9)
    w = rng.normal(size=(3, 20)).astype(np.float32)
    model = _model(w, mean=2.0, std=3.0)
    x = rng.normal(size=20)
    y = rng.normal(size=20)
    alpha, beta = 0.3, -1.7

    def latent_normalized(v):
        return model.weights.astype(np.float64) @ v

    combo = latent_normalized(alpha * x + beta * y)
    parts = alpha * latent_normalized(x) + beta * latent_normalized(y)
    assert np.allclose(combo, parts, rtol=1e-12)


def test_serialized_size_exact():
    for latent, d in ((4, 1221), (2, 30)):
        model = _model(np.zeros((latent, d)), mean=1.0, std=2.0)
        raw = model.to_bytes()
        assert len(raw) == latent * d * 4 + 16
        back = ae.AEModel.from_bytes(raw, latent, d)
        assert np.array_equal(back.weights, model.weights)
        assert back.norm_mean == model.norm_mean
        assert back.norm_std == model.norm_std


def test_paper_weight_count():
    model = _model(np.zeros((4, 1221)))
    assert model.weights.size * 4 == 19536


def test_ae_accuracy_extremes():
    rng = np.random.default_rng(10)
    q, _ = np.linalg.qr(rng.normal(size=(12, 4)))
    w = q.T
    imgs = (q @ rng.normal(size=(4, 30))).T.reshape(30, 3, 4)
    exact = _model(w)
    assert ae.ae_accuracy(imgs, exact, tau=1e-6) == 1.0
    zero = _model(np.zeros((4, 12)))
    assert ae.ae_accuracy(imgs, zero, tau=1e-9) == 0.0
    with pytest.raises(ConfigError):
        ae.ae_accuracy(imgs, exact, tau=0.0)

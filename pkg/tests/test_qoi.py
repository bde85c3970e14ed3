import math

import numpy as np
import pytest

from mlk import fdata, qoi
from mlk.errors import DegenerateRangeError, DimensionError


def grid_with(v_perp, v_par, vol, mass=1.0):
    return fdata.VelocityGrid(v_perp=np.array(v_perp, dtype=float),
                              v_par=np.array(v_par, dtype=float),
                              vol=np.array(vol, dtype=float), mass=mass)


def test_compute_qoi_uniform_symmetry():
    g = grid_with([0, 1], [-1, 1], np.ones((2, 2)))
    n, u, tp, tl = qoi.compute_qoi(np.ones((2, 2)), g)
    assert n == pytest.approx(4.0)
    assert u == pytest.approx(0.0)


def test_compute_qoi_single_active_cell():
    g = grid_with([0, 3], [-2, 2], np.ones((2, 2)))
    img = np.zeros((2, 2))
    img[1, 1] = 2.0  # v_perp = 3, v_par = 2
    n, u, tp, tl = qoi.compute_qoi(img, g)
    assert n == pytest.approx(2.0)
    assert u == pytest.approx(2.0)
    assert tp == pytest.approx(0.5 * (2 * 1 * 1 * 9) / 2)  # = 4.5
    assert tl == pytest.approx(0.0, abs=1e-30)


def test_compute_qoi_matches_generator_fields():
    # quiet corpus: hot turbulent blobs are grid-truncated, so the tight
    # field-versus-moment match only holds away from the patches
    grid = fdata.make_grid(33, 37, 5.0, 5.0, 1.0)
    params = fdata.SyntheticParams(seed=21, rho=0.0, noise=0.0,
                                   turbulent_fraction=0.0)
    n, u, tp, tl = fdata.synth_qoi_fields(16, grid, params)
    ds = fdata.gen_synthetic(1, 16, grid, params)
    for x in range(16):
        got = qoi.compute_qoi(ds.data[0, x], grid)
        assert got[0] == pytest.approx(n[x], rel=1e-6)
        assert got[1] == pytest.approx(u[x], abs=3e-2 * math.sqrt(tp[x]))
        assert got[2] == pytest.approx(tp[x], rel=3e-2)
        assert got[3] == pytest.approx(tl[x], rel=3e-2)


def test_compute_qoi_zero_image_undefined():
    g = grid_with([0, 1], [-1, 1], np.ones((2, 2)))
    n, u, tp, tl = qoi.compute_qoi(np.zeros((2, 2)), g)
    assert n == 0.0
    assert math.isnan(u) and math.isnan(tp) and math.isnan(tl)


def test_compute_qoi_dim_mismatch():
    g = grid_with([0, 1], [-1, 1], np.ones((2, 2)))
    with pytest.raises(DimensionError):
        qoi.compute_qoi(np.ones((3, 2)), g)


def test_compute_qoi_batch_matches_scalar():
    grid = fdata.make_grid(9, 11, 3.0, 4.0, 2.5)
    rng = np.random.default_rng(0)
    imgs = rng.lognormal(0, 1, (20, 9, 11))
    batch = qoi.compute_qoi_batch(imgs, grid)
    for i in range(20):
        n, u, tp, tl = qoi.compute_qoi(imgs[i], grid)
        assert batch.n[i] == pytest.approx(n, rel=1e-13)
        assert batch.u_par[i] == pytest.approx(u, rel=1e-13)
        assert batch.t_perp[i] == pytest.approx(tp, rel=1e-13)
        assert batch.t_par[i] == pytest.approx(tl, rel=1e-13)


def test_qoi_scale_equivariance():
    grid = fdata.make_grid(7, 9, 2.0, 3.0, 1.7)
    rng = np.random.default_rng(4)
    img = rng.lognormal(0, 1, (7, 9))
    base = qoi.compute_qoi(img, grid)
    for alpha in (0.5, 3.0, 1e8):
        n, u, tp, tl = qoi.compute_qoi(alpha * img, grid)
        assert n == pytest.approx(alpha * base[0], rel=1e-12)
        assert u == pytest.approx(base[1], rel=1e-12)
        assert tp == pytest.approx(base[2], rel=1e-12)
        assert tl == pytest.approx(base[3], rel=1e-12)


def test_qoi_vpar_translation():
    rng = np.random.default_rng(5)
    img = rng.lognormal(0, 1, (6, 8))
    v_perp = np.linspace(0, 2, 6)
    v_par = np.linspace(-3, 3, 8)
    vol = rng.uniform(0.5, 1.5, (6, 8))
    for delta in (-1.3, 0.7):
        g0 = grid_with(v_perp, v_par, vol)
        g1 = grid_with(v_perp, v_par + delta, vol)
        b0 = qoi.compute_qoi(img, g0)
        b1 = qoi.compute_qoi(img, g1)
        assert b1[1] == pytest.approx(b0[1] + delta, rel=1e-12, abs=1e-12)
        assert b1[3] == pytest.approx(b0[3], rel=1e-12)


def test_tpar_minimality():
    # the parallel temperature is a variance: recentring anywhere else
    # can only increase the weighted sum
    rng = np.random.default_rng(6)
    grid = fdata.make_grid(6, 8, 2.0, 3.0, 1.0)
    img = rng.lognormal(0, 1, (6, 8))
    n, u, tp, tl = qoi.compute_qoi(img, grid)
    fv = img * grid.vol
    for shift in (-0.5, -0.01, 0.01, 0.5):
        other = 0.5 * grid.mass * np.sum(
            fv * (grid.v_par[None, :] - (u + shift)) ** 2) / n
        assert other > tl


def test_nrmse_examples():
    assert qoi.nrmse([0, 1], [0, 1]) == 0.0
    assert qoi.nrmse([0, 2], [1, 1]) == pytest.approx(0.5)


def test_nrmse_independent_reimplementation():
    rng = np.random.default_rng(7)
    for _ in range(25):
        u = rng.normal(0, 10, 64)
        f = u + rng.normal(0, 0.3, 64)
        expected = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(u, f))
                             / len(u)) / (max(u) - min(u))
        assert qoi.nrmse(u, f) == pytest.approx(expected, rel=1e-15)


def test_nrmse_scale_invariance():
    rng = np.random.default_rng(8)
    u = rng.normal(0, 1, 32)
    f = u + rng.normal(0, 0.1, 32)
    base = qoi.nrmse(u, f)
    for alpha in (2.0, 123.456):
        assert qoi.nrmse(alpha * u, alpha * f) == pytest.approx(base, rel=1e-12)


def test_nrmse_degenerate_range():
    assert qoi.nrmse([3, 3], [3, 3]) == 0.0
    with pytest.raises(DegenerateRangeError):
        qoi.nrmse([3, 3], [3, 4])
    with pytest.raises(DimensionError):
        qoi.nrmse([1, 2], [1, 2, 3])


def test_qoi_error_report_identity():
    grid = fdata.make_grid(9, 9, 2.0, 2.0, 1.0)
    ds = fdata.gen_synthetic(2, 16, grid, fdata.SyntheticParams(seed=2))
    errs, worst = qoi.qoi_error_report(ds, ds)
    assert worst == 0.0
    assert set(errs) == {"n", "u_par", "t_perp", "t_par"}


def test_compression_ratio():
    assert qoi.compression_ratio(1000, 10) == pytest.approx(100.0)
    assert qoi.compression_ratio(10, 10) == pytest.approx(1.0)
    with pytest.raises(ZeroDivisionError):
        qoi.compression_ratio(100, 0)


def test_image_nrmse_flat_reference():
    flat = np.ones((4, 4))
    assert qoi.image_nrmse(flat, flat.copy()) == 0.0
    assert qoi.image_nrmse(flat, flat + 1e-9) == float("inf")

"""Moment-preserving projection via dual Newton ascent.

Given a reconstructed image f_hat and the four true moments, we minimize
the generalized KL distance to f_hat subject to the (linear) moment
constraints.  The primal solution is multiplicative,
f_j = f_plus_j * exp(-lam . a_j), so four Lagrange multipliers per image
are all the decoder needs; the constraint rows are rescaled to unit max
magnitude so the exponentials stay in range across many decades of data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mlk import kernels
from mlk.errors import ConfigError, DimensionError
from mlk.fdata import VelocityGrid

__all__ = [
    "ConstraintSystem",
    "NewtonOptions",
    "NewtonStatus",
    "build_constraints",
    "newton_project",
    "apply_lambda",
    "apply_lambda_batch",
    "cast_lambda",
    "constraint_features",
]

POSITIVITY_FLOOR = 1e-12


class NewtonStatus:
    CONVERGED = kernels.NEWTON_CONVERGED
    MAX_ITER = kernels.NEWTON_MAX_ITER
    DEGENERATE = kernels.NEWTON_DEGENERATE


@dataclass(frozen=True)
class NewtonOptions:
    step: float = 1.0
    max_iter: int = 50
    tol: float = 1e-13
    floor: float = POSITIVITY_FLOOR
    retry: bool = False          # one rerun with a tiny step for stragglers
    retry_step: float = 0.01
    retry_max_iter: int = 400

    def __post_init__(self):
        if not 0 < self.step <= 1:
            raise ConfigError("step size must be in (0, 1]")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")


@dataclass(frozen=True)
class ConstraintSystem:
    """Scaled 4 x D moment constraints for one image."""

    a: np.ndarray            # (4, D) rows scaled to unit max magnitude
    b: np.ndarray            # (4,) targets in scaled space
    row_scales: np.ndarray   # (4,) positive scale factors that were divided out


def constraint_features(grid: VelocityGrid, u_par: float) -> np.ndarray:
    """Unscaled (4, D) feature rows: the integrands of the four moments."""
    vol = grid.vol.reshape(-1)
    v_par = np.broadcast_to(grid.v_par, (grid.rows, grid.cols)).reshape(-1)
    v_perp = np.broadcast_to(grid.v_perp[:, None],
                             (grid.rows, grid.cols)).reshape(-1)
    half_m = 0.5 * grid.mass
    return np.stack([
        vol,
        vol * v_par,
        half_m * vol * v_perp ** 2,
        half_m * vol * (v_par - u_par) ** 2,
    ])


def build_constraints(grid: VelocityGrid, qoi_true) -> ConstraintSystem:
    """Constraint system from the true moments (n, u_par, t_perp, t_par).

    Fixing u_par at its true value makes all four constraints linear in
    the image.  The scales depend only on the grid and the true moments,
    so the decoder rebuilds the identical system from the stored values.
    """
    n, u_par, t_perp, t_par = (float(q) for q in qoi_true)
    if not n > 0:
        raise ConfigError("cannot build constraints for zero density")
    a = constraint_features(grid, u_par)
    b = np.array([n, n * u_par, n * t_perp, n * t_par])
    row_scales = np.max(np.abs(a), axis=1)
    if np.any(row_scales <= 0):
        raise ConfigError("degenerate constraint row")
    a = a / row_scales[:, None]
    b = b / row_scales
    return ConstraintSystem(a=a, b=b, row_scales=row_scales)


def _floored(f_hat: np.ndarray, floor: float):
    top = float(np.max(f_hat))
    if top <= 0:
        return None
    return np.maximum(f_hat, floor * top)


def newton_project(f_hat: np.ndarray, cs: ConstraintSystem,
                   opts: NewtonOptions = NewtonOptions()):
    """Project f_hat onto the constraint manifold.

    Returns (lam, f_corrected, status, iterations); on a degenerate status
    the caller stores the image verbatim instead.
    """
    flat = np.asarray(f_hat, dtype=np.float64).reshape(-1)
    if flat.size != cs.a.shape[1]:
        raise DimensionError("image size does not match the constraint system")
    f_plus = _floored(flat, opts.floor)
    if f_plus is None:
        lam = np.zeros(4)
        return lam, np.asarray(f_hat, dtype=np.float64).copy(), \
            NewtonStatus.DEGENERATE, 0
    lam, status, iters = kernels.newton_solve(
        f_plus, cs.a, cs.b, opts.step, opts.max_iter, opts.tol)
    if status == NewtonStatus.MAX_ITER and opts.retry:
        lam2, status2, iters2 = kernels.newton_solve(
            f_plus, cs.a, cs.b, opts.retry_step, opts.retry_max_iter, opts.tol)
        if status2 == NewtonStatus.CONVERGED:
            lam, status, iters = lam2, status2, iters + iters2
    f_corr = apply_lambda(f_hat, lam, cs, floor=opts.floor)
    return lam, f_corr.reshape(np.asarray(f_hat).shape), status, iters


def apply_lambda(f_hat: np.ndarray, lam: np.ndarray, cs: ConstraintSystem,
                 floor: float = POSITIVITY_FLOOR) -> np.ndarray:
    """Decoder-side correction; the identical arithmetic the encoder used."""
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise ConfigError("lambda values must be finite")
    shape = np.asarray(f_hat).shape
    flat = np.asarray(f_hat, dtype=np.float64).reshape(-1)
    f_plus = _floored(flat, floor)
    if f_plus is None:
        return np.asarray(f_hat, dtype=np.float64).copy()
    a = cs.a
    t = lam[0] * a[0] + lam[1] * a[1] + lam[2] * a[2] + lam[3] * a[3]
    return (f_plus * np.exp(-np.clip(t, -700.0, 700.0))).reshape(shape)


def apply_lambda_batch(f_hats: np.ndarray, lams: np.ndarray,
                       grid: VelocityGrid, qois: np.ndarray,
                       floor: float = POSITIVITY_FLOOR) -> np.ndarray:
    """Vectorized apply_lambda over a stack of images.

    qois holds the stored (n, u_par, t_perp, t_par) per image; each image's
    scaled features are rebuilt exactly as build_constraints does.
    """
    n_img = f_hats.shape[0]
    shape = f_hats.shape[1:]
    flat = f_hats.reshape(n_img, -1)
    base = constraint_features(grid, 0.0)  # rows 0-2 do not depend on u_par
    vol = base[0]
    v_par = np.broadcast_to(grid.v_par, shape).reshape(-1)
    half_m = 0.5 * grid.mass

    # build the scaled rows exactly as build_constraints does, so the batch
    # path is bit-identical to the per-image apply_lambda
    a_shared = [base[r] / np.max(np.abs(base[r])) for r in range(3)]
    a3 = half_m * vol[None, :] * (v_par[None, :] - qois[:, 1:2]) ** 2
    scale3 = np.max(np.abs(a3), axis=1)
    a3 = a3 / np.where(scale3 > 0, scale3, 1.0)[:, None]

    t = (lams[:, 0:1] * a_shared[0][None, :]
         + lams[:, 1:2] * a_shared[1][None, :]
         + lams[:, 2:3] * a_shared[2][None, :]
         + lams[:, 3:4] * a3)
    tops = flat.max(axis=1)
    f_plus = np.maximum(flat, floor * tops[:, None])
    out = f_plus * np.exp(-np.clip(t, -700.0, 700.0))
    degenerate = ~(tops > 0)
    if np.any(degenerate):
        out[degenerate] = flat[degenerate]
    return out.reshape(f_hats.shape)


def project_batch(f_hats: np.ndarray, grid: VelocityGrid, qois: np.ndarray,
                  opts: NewtonOptions = NewtonOptions()):
    """Newton-project a stack of images against their own constraints.

    Builds each image's scaled system with the identical arithmetic as
    build_constraints but reuses the grid-fixed feature rows.  Returns
    (lams, statuses, iterations); rows with non-positive density are
    marked degenerate without projection.
    """
    n_img = f_hats.shape[0]
    flat = f_hats.reshape(n_img, -1)
    base = constraint_features(grid, 0.0)
    shared_scales = np.max(np.abs(base[:3]), axis=1)
    a_buf = np.empty_like(base)
    a_buf[:3] = base[:3] / shared_scales[:, None]
    half_m_vol = 0.5 * grid.mass * base[0]
    v_par = np.broadcast_to(grid.v_par, f_hats.shape[1:]).reshape(-1)

    lams = np.zeros((n_img, 4))
    statuses = np.full(n_img, NewtonStatus.DEGENERATE, dtype=np.int32)
    iters = np.zeros(n_img, dtype=np.int32)
    scales = np.empty(4)
    scales[:3] = shared_scales
    for i in range(n_img):
        n, u_par, t_perp, t_par = qois[i]
        if not n > 0 or not np.all(np.isfinite(qois[i])):
            continue
        a4 = half_m_vol * (v_par - u_par) ** 2
        s4 = np.max(np.abs(a4))
        if not s4 > 0:
            continue
        a_buf[3] = a4 / s4
        scales[3] = s4
        b = np.array([n, n * u_par, n * t_perp, n * t_par]) / scales
        f_plus = _floored(flat[i], opts.floor)
        if f_plus is None:
            continue
        lam, status, it = kernels.newton_solve(
            f_plus, a_buf, b, opts.step, opts.max_iter, opts.tol)
        if status == NewtonStatus.MAX_ITER and opts.retry:
            lam2, status2, it2 = kernels.newton_solve(
                f_plus, a_buf, b, opts.retry_step, opts.retry_max_iter,
                opts.tol)
            if status2 == NewtonStatus.CONVERGED:
                lam, status, it = lam2, status2, it + it2
        lams[i] = lam
        statuses[i] = status
        iters[i] = it
    return lams, statuses, iters


def cast_lambda(lam: np.ndarray, precision: str):
    """Narrow multipliers to the storage precision.

    Returns (cast values as float64, overflowed flag); an overflow marks
    the image for verbatim storage.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if precision == "f64":
        return lam.copy(), False
    if precision == "f32":
        with np.errstate(over="ignore"):
            narrowed = lam.astype(np.float32)
        overflowed = bool(np.any(~np.isfinite(narrowed)))
        return narrowed.astype(np.float64), overflowed
    raise ConfigError(f"unknown lambda precision {precision!r}")

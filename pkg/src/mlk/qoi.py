"""Per-image moment quantities, NRMSE, and pipeline error reporting.

The four moments per histogram are density, parallel flow velocity, and the
perpendicular/parallel temperatures; the three ratio quantities are
undefined where the density vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from mlk.errors import DegenerateRangeError, DimensionError
from mlk.fdata import FDataset, VelocityGrid

__all__ = [
    "QoISet",
    "ErrorReport",
    "compute_qoi",
    "compute_qoi_batch",
    "nrmse",
    "image_nrmse",
    "qoi_error_report",
    "compression_ratio",
]


@dataclass(frozen=True)
class QoISet:
    """Per-(plane, node) moments; ratio entries are NaN where n == 0."""

    n: np.ndarray
    u_par: np.ndarray
    t_perp: np.ndarray
    t_par: np.ndarray

    def defined_mask(self) -> np.ndarray:
        return self.n > 0


def compute_qoi(image: np.ndarray, grid: VelocityGrid):
    """Moments of one histogram; returns (n, u_par, t_perp, t_par)."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (grid.rows, grid.cols):
        raise DimensionError(
            f"image shape {image.shape} does not match grid "
            f"({grid.rows}, {grid.cols})")
    fv = image * grid.vol
    n = float(np.sum(fv))
    if n <= 0.0:
        return n, float("nan"), float("nan"), float("nan")
    m = grid.mass
    u_par = float(np.sum(fv * grid.v_par[None, :])) / n
    t_perp = 0.5 * m * float(np.sum(fv * grid.v_perp[:, None] ** 2)) / n
    t_par = 0.5 * m * float(np.sum(fv * (grid.v_par[None, :] - u_par) ** 2)) / n
    return n, u_par, t_perp, t_par


def compute_qoi_batch(images: np.ndarray, grid: VelocityGrid) -> QoISet:
    """Vectorized moments for a (N, rows, cols) stack."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != (grid.rows, grid.cols):
        raise DimensionError("image stack does not match the grid")
    fv = images * grid.vol
    n = np.einsum("irc->i", fv)
    m = grid.mass
    with np.errstate(invalid="ignore", divide="ignore"):
        u_par = np.einsum("irc,c->i", fv, grid.v_par) / n
        t_perp = 0.5 * m * np.einsum("irc,r->i", fv, grid.v_perp ** 2) / n
        dv = grid.v_par[None, None, :] - u_par[:, None, None]
        t_par = 0.5 * m * np.einsum("irc,irc->i", fv, dv ** 2) / n
    bad = ~(n > 0)
    for arr in (u_par, t_perp, t_par):
        arr[bad] = np.nan
    return QoISet(n=n, u_par=u_par, t_perp=t_perp, t_par=t_par)


def nrmse(u, f) -> float:
    """Root mean square error normalized by the range of the reference."""
    u = np.asarray(u, dtype=np.float64).ravel()
    f = np.asarray(f, dtype=np.float64).ravel()
    if u.size != f.size or u.size == 0:
        raise DimensionError("nrmse needs two equal-length, non-empty arrays")
    rng = float(np.max(u) - np.min(u))
    if rng == 0.0:
        if np.array_equal(u, f):
            return 0.0
        raise DegenerateRangeError("reference range is zero but arrays differ")
    return float(np.sqrt(np.mean((u - f) ** 2)) / rng)


def image_nrmse(orig: np.ndarray, recon: np.ndarray) -> float:
    """Per-image NRMSE; infinite when the reference is flat but recon differs.

    Used for residual selection so degenerate images are always selected
    out (they are stored verbatim rather than projected).
    """
    orig = np.asarray(orig, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    rng = float(np.max(orig) - np.min(orig))
    if rng == 0.0:
        return 0.0 if np.array_equal(orig, recon) else float("inf")
    return float(np.sqrt(np.mean((orig - recon) ** 2)) / rng)


def image_nrmse_batch(orig: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Per-image NRMSE over (N, rows, cols) stacks; inf for flat mismatches."""
    n = orig.shape[0]
    flat_o = orig.reshape(n, -1)
    flat_r = recon.reshape(n, -1)
    rng = flat_o.max(axis=1) - flat_o.min(axis=1)
    rms = np.sqrt(np.mean((flat_o - flat_r) ** 2, axis=1))
    out = np.empty(n, dtype=np.float64)
    ok = rng > 0
    out[ok] = rms[ok] / rng[ok]
    flat = ~ok
    out[flat] = np.where(rms[flat] == 0.0, 0.0, np.inf)
    return out


def qoi_error_report(orig: FDataset, recon: FDataset):
    """NRMSE of the four moments over all defined images, plus the maximum."""
    if orig.data.shape != recon.data.shape:
        raise DimensionError("original and reconstruction shapes differ")
    q_orig = compute_qoi_batch(orig.images(), orig.grid)
    q_recon = compute_qoi_batch(recon.images(), orig.grid)
    mask = q_orig.defined_mask()
    errs = {}
    for name in ("n", "u_par", "t_perp", "t_par"):
        errs[name] = nrmse(getattr(q_orig, name)[mask],
                           getattr(q_recon, name)[mask])
    return errs, max(errs.values())


def compression_ratio(original_bytes: int, archive_bytes: int) -> float:
    if archive_bytes <= 0:
        raise ZeroDivisionError("archive size must be positive")
    return original_bytes / archive_bytes


@dataclass
class ErrorReport:
    """Everything the `eval` command reports; serializes to JSON."""

    pd_nrmse: float = 0.0
    per_image_nrmse: list = field(default_factory=list)
    qoi_nrmse: dict = field(default_factory=dict)
    max_qoi_nrmse: float = 0.0
    compression_ratio: float = 0.0
    ae_accuracy: float = 0.0
    residual_fraction: float = 0.0
    convergence_fraction: float = 1.0
    exception_count: int = 0
    stage_timings: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)

    def max_per_image_nrmse(self) -> float:
        return max(self.per_image_nrmse) if self.per_image_nrmse else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

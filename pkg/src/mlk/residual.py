"""Selective residual coding with a pluggable error-bounded codec.

Images whose AE reconstruction misses the per-image error threshold get
their residuals compressed by a codec guaranteeing a componentwise L-inf
bound; the bound itself is auto-tuned by a log-space binary search.  The
built-in codec uniform-quantizes, zigzag-varint-packs and DEFLATEs the
residual; a lossless mode stores raw float bit patterns instead.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from mlk import kernels
from mlk.errors import ConfigError, FormatError
from mlk.qoi import image_nrmse_batch

__all__ = [
    "EBCodec",
    "BuiltinCodec",
    "ResidualPlan",
    "select_residuals",
    "find_error_bound",
    "apply_residuals",
]

_MODE_QUANTIZED = 0
_MODE_LOSSLESS = 1
_HEADER = struct.Struct("<BHHd")  # mode, rows, cols, eb
_DEFLATE_LEVEL = 6
_SEARCH_SPAN = 2.0 ** -20
_SEARCH_STEPS = 20


class EBCodec:
    """Interface: compress/decompress with |r - r_hat| <= eb per entry."""

    def compress(self, residual: np.ndarray, eb: float) -> bytes:
        raise NotImplementedError

    def decompress(self, payload: bytes) -> np.ndarray:
        raise NotImplementedError

    def quantize_roundtrip(self, residual: np.ndarray, eb: float) -> np.ndarray:
        """What decompress(compress(residual, eb)) reconstructs.

        Used by the error-bound search so probing does not pay for byte
        serialization; must agree exactly with the byte path.
        """
        return self.decompress(self.compress(residual, eb))


class BuiltinCodec(EBCodec):
    """Uniform quantizer + zigzag varint + DEFLATE."""

    def compress(self, residual: np.ndarray, eb: float) -> bytes:
        residual = np.asarray(residual, dtype=np.float64)
        if eb <= 0:
            raise ConfigError("error bound must be positive")
        if not np.all(np.isfinite(residual)):
            raise ConfigError("residual must be finite")
        q = np.rint(residual / (2.0 * eb))
        if np.any(np.abs(q) >= 2.0 ** 62):
            raise ConfigError("error bound too small for this residual range")
        codes = kernels.zigzag_map(q.astype(np.int64).reshape(-1))
        body = zlib.compress(kernels.varint_encode(codes), _DEFLATE_LEVEL)
        rows, cols = residual.shape
        return _HEADER.pack(_MODE_QUANTIZED, rows, cols, eb) + body

    def compress_lossless(self, residual: np.ndarray) -> bytes:
        residual = np.ascontiguousarray(residual, dtype="<f8")
        bits = residual.reshape(-1).view(np.uint64)
        body = zlib.compress(kernels.varint_encode(bits), _DEFLATE_LEVEL)
        rows, cols = residual.shape
        return _HEADER.pack(_MODE_LOSSLESS, rows, cols, 0.0) + body

    def decompress(self, payload: bytes) -> np.ndarray:
        if len(payload) < _HEADER.size:
            raise FormatError("residual payload shorter than its header")
        mode, rows, cols, eb = _HEADER.unpack_from(payload, 0)
        try:
            raw = zlib.decompress(payload[_HEADER.size:])
        except zlib.error as exc:
            raise FormatError(f"corrupt residual stream: {exc}") from exc
        count = rows * cols
        codes, consumed = kernels.varint_decode(raw, count)
        if consumed != len(raw):
            raise FormatError("residual stream has trailing bytes")
        if mode == _MODE_QUANTIZED:
            q = kernels.zigzag_unmap(codes).astype(np.float64)
            return (q * (2.0 * eb)).reshape(rows, cols)
        if mode == _MODE_LOSSLESS:
            return codes.view(np.float64).reshape(rows, cols).copy()
        raise FormatError(f"unknown residual payload mode {mode}")

    def quantize_roundtrip(self, residual: np.ndarray, eb: float) -> np.ndarray:
        residual = np.asarray(residual, dtype=np.float64)
        return np.rint(residual / (2.0 * eb)) * (2.0 * eb)


@dataclass
class ResidualPlan:
    tau: float
    eb: float
    lossless: bool
    selected: np.ndarray            # ascending image indices
    payloads: list = field(default_factory=list)

    @property
    def payload_bytes(self) -> int:
        return sum(len(p) for p in self.payloads)


def select_residuals(originals: np.ndarray, ae_recons: np.ndarray,
                     tau: float) -> np.ndarray:
    """Ascending indices of images whose AE error exceeds tau."""
    if tau <= 0:
        raise ConfigError("tau must be positive")
    if originals.shape != ae_recons.shape:
        raise ConfigError("original/reconstruction shapes differ")
    errs = image_nrmse_batch(originals, ae_recons)
    return np.flatnonzero(errs > tau)


def find_error_bound(selected_orig: np.ndarray, selected_recons: np.ndarray,
                     tau: float, codec: EBCodec):
    """Largest probed error bound whose corrections pass on every image.

    Log-space binary search in [eb_hi * 2^-20, eb_hi] with
    eb_hi = tau * (largest selected image range); returns (eb, lossless)
    where lossless signals that even the smallest probe failed.
    """
    if len(selected_orig) == 0:
        raise ConfigError("error-bound search needs a non-empty selection")
    if tau <= 0:
        raise ConfigError("tau must be positive")
    n_sel = len(selected_orig)
    flat_o = selected_orig.reshape(n_sel, -1)
    ranges = flat_o.max(axis=1) - flat_o.min(axis=1)
    eb_hi = tau * float(ranges.max())
    if eb_hi <= 0:
        return eb_hi, True
    residuals = flat_o - selected_recons.reshape(n_sel, -1)

    def accepted(eb):
        # identical arithmetic to apply_residuals + the per-image metric:
        # corrected = recon + r_hat, error = nrmse(orig, corrected)
        corrected = selected_recons + codec.quantize_roundtrip(
            residuals, eb).reshape(selected_recons.shape)
        errs = image_nrmse_batch(selected_orig, corrected)
        return bool(np.all(errs <= tau))

    if accepted(eb_hi):
        return eb_hi, False
    lo, hi = np.log(eb_hi * _SEARCH_SPAN), np.log(eb_hi)
    best = None
    for _ in range(_SEARCH_STEPS):
        mid = 0.5 * (lo + hi)
        if accepted(np.exp(mid)):
            best = np.exp(mid)
            lo = mid
        else:
            hi = mid
    if best is not None:
        return float(best), False
    smallest = eb_hi * _SEARCH_SPAN
    if accepted(smallest):
        return float(smallest), False
    return float(smallest), True


def build_plan(originals: np.ndarray, ae_recons: np.ndarray, tau: float,
               codec: BuiltinCodec) -> ResidualPlan:
    """Select, tune the bound, and encode all residual payloads."""
    selected = select_residuals(originals, ae_recons, tau)
    if selected.size == 0:
        return ResidualPlan(tau=tau, eb=0.0, lossless=False,
                            selected=selected, payloads=[])
    eb, lossless = find_error_bound(originals[selected], ae_recons[selected],
                                    tau, codec)
    payloads = []
    for i in selected:
        r = originals[i] - ae_recons[i]
        payloads.append(codec.compress_lossless(r) if lossless
                        else codec.compress(r, eb))
    return ResidualPlan(tau=tau, eb=eb, lossless=lossless,
                        selected=selected, payloads=payloads)


def apply_residuals(ae_recons: np.ndarray, plan: ResidualPlan,
                    codec: EBCodec) -> np.ndarray:
    """Add decoded residuals onto the selected reconstructions."""
    corrected = ae_recons.copy()
    for i, payload in zip(plan.selected, plan.payloads):
        r = codec.decompress(payload)
        if r.shape != corrected[i].shape:
            raise FormatError("residual payload dims do not match the image")
        corrected[i] = corrected[i] + r
    return corrected

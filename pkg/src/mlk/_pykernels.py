"""Pure numpy implementations of the hot kernels.

Same call signatures as the compiled module ``mlk._ckernels``; the
dispatcher in :mod:`mlk.kernels` picks whichever is available.
"""

import numpy as np

BACKEND_NAME = "python"

NEWTON_CONVERGED = 0
NEWTON_MAX_ITER = 1
NEWTON_DEGENERATE = 2

_EXP_CLAMP = 700.0


def newton_solve(f_plus, a, b, step, max_iter, tol):
    """Damped Newton ascent on the dual of the KL projection.

    f_plus : (D,) strictly positive base image (already floored)
    a      : (4, D) scaled constraint features
    b      : (4,) scaled targets
    Returns (lam, status, iterations); the caller derives the corrected
    image from lam so that compressor and decompressor share one code path.
    """
    lam = np.zeros(4, dtype=np.float64)
    bscale = float(np.max(np.abs(b)))
    if not np.isfinite(bscale) or bscale <= 0.0:
        return lam, NEWTON_DEGENERATE, 0
    clamped = False
    for it in range(max_iter + 1):
        t = lam[0] * a[0] + lam[1] * a[1] + lam[2] * a[2] + lam[3] * a[3]
        if np.max(np.abs(t)) > _EXP_CLAMP:
            clamped = True
            t = np.clip(t, -_EXP_CLAMP, _EXP_CLAMP)
        f = f_plus * np.exp(-t)
        g = a @ f - b
        if not np.all(np.isfinite(g)):
            return lam, NEWTON_DEGENERATE, it
        if np.max(np.abs(g)) <= tol * bscale:
            status = NEWTON_MAX_ITER if clamped else NEWTON_CONVERGED
            return lam, status, it
        if it == max_iter:
            break
        m = (a * f) @ a.T
        d = _solve4(m, g)
        if d is None:
            return lam, NEWTON_DEGENERATE, it
        lam = lam + step * d
    return lam, NEWTON_MAX_ITER, max_iter


def _solve4(m, g):
    try:
        d = np.linalg.solve(m, g)
        if np.all(np.isfinite(d)):
            return d
    except np.linalg.LinAlgError:
        pass
    # Tikhonov jitter for (near-)singular Hessians
    jitter = 1e-14 * np.trace(m)
    if jitter <= 0.0 or not np.isfinite(jitter):
        return None
    try:
        d = np.linalg.solve(m + jitter * np.eye(4), g)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(d)):
        return None
    return d


# ---------------------------------------------------------------------------
# zigzag + LEB128 varint streams

def zigzag_map(values):
    """Signed int64 -> unsigned uint64 zigzag code."""
    q = np.ascontiguousarray(values, dtype=np.int64)
    return ((q << 1) ^ (q >> 63)).astype(np.uint64)


def zigzag_unmap(codes):
    z = np.ascontiguousarray(codes, dtype=np.uint64)
    return ((z >> np.uint64(1)) ^ (np.uint64(0) - (z & np.uint64(1)))).astype(np.int64)


def varint_encode(values):
    """LEB128-encode a uint64 array; returns bytes."""
    v = np.ascontiguousarray(values, dtype=np.uint64)
    n = v.size
    if n == 0:
        return b""
    groups = np.empty((n, 10), dtype=np.uint8)
    rem = v.copy()
    for k in range(10):
        groups[:, k] = (rem & np.uint64(0x7F)).astype(np.uint8)
        rem >>= np.uint64(7)
    nonzero = groups != 0
    has_any = nonzero.any(axis=1)
    last = np.where(has_any, 9 - np.argmax(nonzero[:, ::-1], axis=1), 0)
    pos = np.arange(10, dtype=np.int64)[None, :]
    keep = pos <= last[:, None]
    cont = pos < last[:, None]
    groups = np.where(cont, groups | 0x80, groups)
    return groups[keep].tobytes()


def varint_decode(buf, count):
    """Decode ``count`` LEB128 values; returns (uint64 array, bytes consumed)."""
    if count == 0:
        return np.zeros(0, dtype=np.uint64), 0
    arr = np.frombuffer(buf, dtype=np.uint8)
    if arr.size == 0:
        raise ValueError("varint stream truncated")
    ends = (arr & 0x80) == 0
    end_idx = np.flatnonzero(ends)
    if end_idx.size < count:
        raise ValueError("varint stream truncated")
    consumed = int(end_idx[count - 1]) + 1
    arr = arr[:consumed]
    ends = ends[:consumed]
    gid = np.zeros(consumed, dtype=np.int64)
    gid[1:] = np.cumsum(ends[:-1])
    group_start = np.zeros(count, dtype=np.int64)
    group_start[1:] = end_idx[: count - 1] + 1
    pos = np.arange(consumed, dtype=np.int64) - group_start[gid]
    if np.any(pos > 9):
        raise ValueError("varint value exceeds 64 bits")
    contrib = (arr & 0x7F).astype(np.uint64) << (np.uint64(7) * pos.astype(np.uint64))
    out = np.zeros(count, dtype=np.uint64)
    np.add.at(out, gid, contrib)
    return out, consumed


# ---------------------------------------------------------------------------
# fixed-width index packing (product-quantizer codes)

def pack_indices(indices, bits):
    """Pack small unsigned ints into a little-endian bitstream."""
    if not 1 <= bits <= 16:
        raise ValueError(f"bits must be in [1, 16], got {bits}")
    idx = np.ascontiguousarray(indices, dtype=np.uint16)
    if idx.size and int(idx.max()) >= (1 << bits):
        raise ValueError("index does not fit the configured bit width")
    if idx.size == 0:
        return b""
    bit_rows = np.unpackbits(idx.view(np.uint8).reshape(-1, 2), axis=1,
                             bitorder="little")[:, :bits]
    flat = bit_rows.reshape(-1)
    pad = (-flat.size) % 8
    if pad:
        flat = np.concatenate([flat, np.zeros(pad, dtype=np.uint8)])
    return np.packbits(flat, bitorder="little").tobytes()


def unpack_indices(buf, count, bits):
    if not 1 <= bits <= 16:
        raise ValueError(f"bits must be in [1, 16], got {bits}")
    if count == 0:
        return np.zeros(0, dtype=np.uint16)
    total_bits = count * bits
    arr = np.frombuffer(buf, dtype=np.uint8)
    if arr.size * 8 < total_bits:
        raise ValueError("packed index stream too short")
    flat = np.unpackbits(arr, bitorder="little")[:total_bits]
    weights = (np.uint16(1) << np.arange(bits, dtype=np.uint16)).astype(np.uint16)
    return (flat.reshape(count, bits).astype(np.uint16) @ weights).astype(np.uint16)

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: dual-Newton iteration, varint/zigzag codec, and
fixed-width index packing.  Semantics match mlk._pykernels; floating-point
results may differ from the numpy path by rounding only."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite

cnp.import_array()

BACKEND_NAME = "compiled"

NEWTON_CONVERGED = 0
NEWTON_MAX_ITER = 1
NEWTON_DEGENERATE = 2

cdef int _ST_CONV = 0
cdef int _ST_MAXIT = 1
cdef int _ST_DEGEN = 2
cdef double _EXP_CLAMP = 700.0


cdef int _solve4(double* m, double* rhs, double* out) noexcept nogil:
    """Partial-pivot Gaussian elimination on a 4x4 system; 0 on success."""
    cdef double a[4][5]
    cdef int i, j, k, piv
    cdef double best, factor, tmp
    for i in range(4):
        for j in range(4):
            a[i][j] = m[4 * i + j]
        a[i][4] = rhs[i]
    for k in range(4):
        piv = k
        best = fabs(a[k][k])
        for i in range(k + 1, 4):
            if fabs(a[i][k]) > best:
                best = fabs(a[i][k])
                piv = i
        if best < 1e-300 or not isfinite(best):
            return 1
        if piv != k:
            for j in range(5):
                tmp = a[k][j]
                a[k][j] = a[piv][j]
                a[piv][j] = tmp
        for i in range(k + 1, 4):
            factor = a[i][k] / a[k][k]
            for j in range(k, 5):
                a[i][j] -= factor * a[k][j]
    for k in range(3, -1, -1):
        tmp = a[k][4]
        for j in range(k + 1, 4):
            tmp -= a[k][j] * out[j]
        out[k] = tmp / a[k][k]
        if not isfinite(out[k]):
            return 1
    return 0


def newton_solve(f_plus, a, b, double step, int max_iter, double tol):
    """See mlk._pykernels.newton_solve."""
    cdef double[::1] fp = np.ascontiguousarray(f_plus, dtype=np.float64)
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t d = fp.shape[0]
    cdef double lam[4]
    cdef double g[4]
    cdef double m[16]
    cdef double dlt[4]
    cdef double bscale = 0.0, t, f, gmax, jitter
    cdef int k, l, it, clamped = 0, bad = 0
    cdef int status = _ST_MAXIT
    cdef int iters = max_iter
    cdef Py_ssize_t j

    lam_out = np.zeros(4, dtype=np.float64)
    cdef double[::1] lam_view = lam_out
    for k in range(4):
        lam[k] = 0.0
        if fabs(bv[k]) > bscale:
            bscale = fabs(bv[k])
    if bscale <= 0.0 or not isfinite(bscale):
        return lam_out, NEWTON_DEGENERATE, 0

    with nogil:
        for it in range(max_iter + 1):
            for k in range(4):
                g[k] = -bv[k]
            for k in range(16):
                m[k] = 0.0
            for j in range(d):
                t = (lam[0] * av[0, j] + lam[1] * av[1, j]
                     + lam[2] * av[2, j] + lam[3] * av[3, j])
                if fabs(t) > _EXP_CLAMP:
                    clamped = 1
                    t = _EXP_CLAMP if t > 0 else -_EXP_CLAMP
                f = fp[j] * exp(-t)
                for k in range(4):
                    g[k] += av[k, j] * f
                    for l in range(4):
                        m[4 * k + l] += av[k, j] * av[l, j] * f
            gmax = 0.0
            bad = 0
            for k in range(4):
                if not isfinite(g[k]):
                    bad = 1
                if fabs(g[k]) > gmax:
                    gmax = fabs(g[k])
            if bad:
                status = _ST_DEGEN
                iters = it
                break
            if gmax <= tol * bscale:
                status = _ST_MAXIT if clamped else _ST_CONV
                iters = it
                break
            if it == max_iter:
                break
            if _solve4(m, g, dlt) != 0:
                jitter = 1e-14 * (m[0] + m[5] + m[10] + m[15])
                bad = 1
                if jitter > 0.0 and isfinite(jitter):
                    for k in range(4):
                        m[4 * k + k] += jitter
                    if _solve4(m, g, dlt) == 0:
                        bad = 0
                if bad:
                    status = _ST_DEGEN
                    iters = it
                    break
            for k in range(4):
                lam[k] += step * dlt[k]
    for k in range(4):
        lam_view[k] = lam[k]
    return lam_out, status, iters


# ---------------------------------------------------------------------------
# zigzag + LEB128 varint

def zigzag_map(values):
    q = np.ascontiguousarray(values, dtype=np.int64)
    return ((q << 1) ^ (q >> 63)).astype(np.uint64)


def zigzag_unmap(codes):
    z = np.ascontiguousarray(codes, dtype=np.uint64)
    return ((z >> np.uint64(1)) ^ (np.uint64(0) - (z & np.uint64(1)))).astype(np.int64)


def varint_encode(values):
    cdef unsigned long long[::1] v = np.ascontiguousarray(values, dtype=np.uint64)
    cdef Py_ssize_t n = v.shape[0]
    if n == 0:
        return b""
    out = np.empty(n * 10, dtype=np.uint8)
    cdef unsigned char[::1] o = out
    cdef Py_ssize_t pos = 0, i
    cdef unsigned long long x
    with nogil:
        for i in range(n):
            x = v[i]
            while x >= 0x80:
                o[pos] = <unsigned char> ((x & 0x7F) | 0x80)
                pos += 1
                x >>= 7
            o[pos] = <unsigned char> x
            pos += 1
    return out[:pos].tobytes()


def varint_decode(buf, Py_ssize_t count):
    if count == 0:
        return np.zeros(0, dtype=np.uint64), 0
    arr = np.frombuffer(buf, dtype=np.uint8)
    cdef const unsigned char[::1] data = arr
    cdef Py_ssize_t size = data.shape[0]
    out = np.zeros(count, dtype=np.uint64)
    cdef unsigned long long[::1] o = out
    cdef Py_ssize_t pos = 0, i
    cdef int shift
    cdef unsigned long long x
    cdef unsigned char byte
    cdef int truncated = 0, overflow = 0
    with nogil:
        for i in range(count):
            x = 0
            shift = 0
            while True:
                if pos >= size:
                    truncated = 1
                    break
                byte = data[pos]
                pos += 1
                x |= (<unsigned long long> (byte & 0x7F)) << shift
                if byte < 0x80:
                    break
                shift += 7
                if shift > 63:
                    overflow = 1
                    break
            if truncated or overflow:
                break
            o[i] = x
    if truncated:
        raise ValueError("varint stream truncated")
    if overflow:
        raise ValueError("varint value exceeds 64 bits")
    return out, pos


# ---------------------------------------------------------------------------
# fixed-width index packing

def pack_indices(indices, int bits):
    if bits < 1 or bits > 16:
        raise ValueError(f"bits must be in [1, 16], got {bits}")
    cdef unsigned short[::1] idx = np.ascontiguousarray(indices, dtype=np.uint16)
    cdef Py_ssize_t n = idx.shape[0]
    if n == 0:
        return b""
    cdef unsigned int limit = 1 << bits
    cdef Py_ssize_t nbytes = (n * bits + 7) // 8
    out = np.zeros(nbytes, dtype=np.uint8)
    cdef unsigned char[::1] o = out
    cdef unsigned int acc = 0
    cdef int nacc = 0
    cdef Py_ssize_t pos = 0, i
    cdef int bad = 0
    with nogil:
        for i in range(n):
            if idx[i] >= limit:
                bad = 1
                break
            acc |= (<unsigned int> idx[i]) << nacc
            nacc += bits
            while nacc >= 8:
                o[pos] = <unsigned char> (acc & 0xFF)
                acc >>= 8
                nacc -= 8
                pos += 1
        if not bad and nacc > 0:
            o[pos] = <unsigned char> (acc & 0xFF)
            pos += 1
    if bad:
        raise ValueError("index does not fit the configured bit width")
    return out.tobytes()


def unpack_indices(buf, Py_ssize_t count, int bits):
    if bits < 1 or bits > 16:
        raise ValueError(f"bits must be in [1, 16], got {bits}")
    if count == 0:
        return np.zeros(0, dtype=np.uint16)
    arr = np.frombuffer(buf, dtype=np.uint8)
    cdef const unsigned char[::1] data = arr
    if data.shape[0] * 8 < count * bits:
        raise ValueError("packed index stream too short")
    out = np.empty(count, dtype=np.uint16)
    cdef unsigned short[::1] o = out
    cdef unsigned int acc = 0, mask = (1 << bits) - 1
    cdef int nacc = 0
    cdef Py_ssize_t pos = 0, i
    with nogil:
        for i in range(count):
            while nacc < bits:
                acc |= (<unsigned int> data[pos]) << nacc
                nacc += 8
                pos += 1
            o[i] = <unsigned short> (acc & mask)
            acc >>= bits
            nacc -= bits
    return out

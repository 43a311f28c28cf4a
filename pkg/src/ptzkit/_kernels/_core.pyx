# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: batch codec round trip and CART split search.

Semantics match ``_pykernels`` exactly; the split search reproduces its
floating-point evaluation order (stable argsort, sequential prefix sums) so
both backends build bit-identical trees.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef long long ID_PAN = 0
cdef long long ID_TILT = 1
cdef long long ID_ZOOM = 2
cdef long long ID_POS = 3
cdef long long ID_NEG = 4
cdef long long ID_END = 14

cdef long long[9] MAG_VALUES
MAG_VALUES[0] = 1
MAG_VALUES[1] = 2
MAG_VALUES[2] = 5
MAG_VALUES[3] = 10
MAG_VALUES[4] = 20
MAG_VALUES[5] = 50
MAG_VALUES[6] = 100
MAG_VALUES[7] = 200
MAG_VALUES[8] = 500


def max_seq_len(int levels):
    return 6 + 9 * levels


def greedy_magnitude_counts(values):
    """Greedy magnitude-token count for each value (digits over basis {5,2,1})."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] v = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t i
    cdef long long val, d, r, c
    for i in range(n):
        val = v[i]
        if val < 0:
            val = -val
        c = 0
        while val > 0:
            d = val % 10
            r = d % 5
            c += d / 5 + r / 2 + r % 2
            val = val / 10
        counts[i] = c
    return counts


cdef inline Py_ssize_t _emit_magnitudes(long long value, int levels, long long* out, Py_ssize_t pos) nogil:
    cdef int level
    cdef long long digit, a5, rest, a2, a1, p10, j
    for level in range(levels - 1, -1, -1):
        p10 = 1
        for j in range(level):
            p10 *= 10
        digit = (value / p10) % 10
        a5 = digit / 5
        rest = digit % 5
        a2 = rest / 2
        a1 = rest % 2
        for j in range(a5):
            out[pos] = 5 + 3 * level + 2
            pos += 1
        for j in range(a2):
            out[pos] = 5 + 3 * level + 1
            pos += 1
        for j in range(a1):
            out[pos] = 5 + 3 * level + 0
            pos += 1
    return pos


cdef inline Py_ssize_t _encode_one(long long pan, long long tilt, long long zoom,
                                   int levels, long long* out) nogil:
    cdef Py_ssize_t pos = 0
    out[pos] = ID_PAN
    pos += 1
    if pan != 0:
        out[pos] = ID_POS if pan > 0 else ID_NEG
        pos += 1
        pos = _emit_magnitudes(pan if pan > 0 else -pan, levels, out, pos)
    out[pos] = ID_TILT
    pos += 1
    if tilt != 0:
        out[pos] = ID_POS if tilt > 0 else ID_NEG
        pos += 1
        pos = _emit_magnitudes(tilt if tilt > 0 else -tilt, levels, out, pos)
    out[pos] = ID_ZOOM
    pos += 1
    if zoom != 0:
        pos = _emit_magnitudes(zoom, levels, out, pos)
    out[pos] = ID_END
    pos += 1
    return pos


cdef inline bint _decode_one(long long* ids, Py_ssize_t n, long long limit,
                             long long* pan, long long* tilt, long long* zoom) nogil:
    cdef Py_ssize_t pos = 0
    cdef long long vals[3]
    cdef int axis
    cdef long long sign, prev, total, nmags, mv
    cdef bint have_sign
    for axis in range(3):
        if pos >= n or ids[pos] != axis:
            return False
        pos += 1
        sign = 1
        have_sign = False
        if axis < 2 and pos < n and (ids[pos] == ID_POS or ids[pos] == ID_NEG):
            sign = 1 if ids[pos] == ID_POS else -1
            have_sign = True
            pos += 1
        prev = 1 << 30
        total = 0
        nmags = 0
        while pos < n and 5 <= ids[pos] <= 13:
            mv = MAG_VALUES[ids[pos] - 5]
            if mv > prev:
                return False
            prev = mv
            total += mv
            nmags += 1
            pos += 1
        if have_sign and nmags == 0:
            return False
        if axis < 2 and nmags > 0 and not have_sign:
            return False
        if total > limit:
            return False
        vals[axis] = sign * total
    if pos != n - 1 or ids[pos] != ID_END:
        return False
    pan[0] = vals[0]
    tilt[0] = vals[1]
    zoom[0] = vals[2]
    return True


def encode_actions(pan, tilt, zoom, int levels=3):
    """Canonical token-id sequences for a batch of actions.

    Returns (tokens, lengths) where tokens is int64[n, max_seq_len(levels)]
    padded with -1.
    """
    cdef cnp.ndarray[cnp.int64_t, ndim=1] p = np.ascontiguousarray(pan, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] t = np.ascontiguousarray(tilt, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] z = np.ascontiguousarray(zoom, dtype=np.int64)
    cdef Py_ssize_t n = p.shape[0]
    if levels < 1 or levels > 6:
        raise ValueError("levels must be in [1, 6]")
    cdef int width = 6 + 9 * levels
    cdef cnp.ndarray[cnp.int64_t, ndim=2] tokens = np.full((n, width), -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lengths = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t i, j, ln
    cdef long long buf[64]
    for i in range(n):
        ln = _encode_one(p[i], t[i], z[i], levels, buf)
        lengths[i] = ln
        for j in range(ln):
            tokens[i, j] = buf[j]
    return tokens, lengths


def roundtrip_failures(pan, tilt, zoom, int levels=3):
    """Count of actions whose encode->decode round trip does not reproduce them."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] p = np.ascontiguousarray(pan, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] t = np.ascontiguousarray(tilt, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] z = np.ascontiguousarray(zoom, dtype=np.int64)
    cdef Py_ssize_t n = p.shape[0]
    if levels < 1 or levels > 6:
        raise ValueError("levels must be in [1, 6]")
    cdef long long limit = 1
    cdef int l
    for l in range(levels):
        limit *= 10
    limit -= 1
    cdef long long failures = 0
    cdef long long buf[64]
    cdef long long dp, dt, dz
    cdef Py_ssize_t i, ln
    with nogil:
        for i in range(n):
            ln = _encode_one(p[i], t[i], z[i], levels, buf)
            if not _decode_one(buf, ln, limit, &dp, &dt, &dz):
                failures += 1
            elif dp != p[i] or dt != t[i] or dz != z[i]:
                failures += 1
    return failures


def roundtrip_exhaustive(long long pan_lo, long long pan_hi,
                         long long tilt_lo, long long tilt_hi,
                         long long zoom_lo, long long zoom_hi, int levels=3):
    """Round-trip failure count over an inclusive integer grid of actions."""
    if levels < 1 or levels > 6:
        raise ValueError("levels must be in [1, 6]")
    cdef long long limit = 1
    cdef int l
    for l in range(levels):
        limit *= 10
    limit -= 1
    cdef long long failures = 0
    cdef long long buf[64]
    cdef long long dp, dt, dz
    cdef long long p, t, z
    cdef Py_ssize_t ln
    with nogil:
        for p in range(pan_lo, pan_hi + 1):
            for t in range(tilt_lo, tilt_hi + 1):
                for z in range(zoom_lo, zoom_hi + 1):
                    ln = _encode_one(p, t, z, levels, buf)
                    if not _decode_one(buf, ln, limit, &dp, &dt, &dz):
                        failures += 1
                    elif dp != p or dt != t or dz != z:
                        failures += 1
    return failures


def best_split(x, y, idx, int min_leaf):
    """Best variance-reducing axis-aligned split over samples ``idx``.

    Returns (feature, threshold, sse); see the fallback docstring for the
    contract.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ia = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t m = ia.shape[0]
    cdef Py_ssize_t nfeat = xa.shape[1]
    cdef int best_f = -1
    cdef double best_thr = 0.0
    cdef double best_sse = np.inf
    if m < 2 * min_leaf:
        return best_f, best_thr, best_sse

    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xs = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yo = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order
    cdef Py_ssize_t f, i, k
    cdef double cy, cy2, total_y, total_y2, sl, sl2, sr, sr2, sse, thr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pre_y = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pre_y2 = np.empty(m, dtype=np.float64)

    for f in range(nfeat):
        for i in range(m):
            xv[i] = xa[ia[i], f]
        order = np.argsort(xv, kind="stable")
        for i in range(m):
            xs[i] = xv[order[i]]
            yo[i] = ya[ia[order[i]]]
        if xs[0] == xs[m - 1]:
            continue
        cy = 0.0
        cy2 = 0.0
        for i in range(m):
            cy += yo[i]
            cy2 += yo[i] * yo[i]
            pre_y[i] = cy
            pre_y2[i] = cy2
        total_y = pre_y[m - 1]
        total_y2 = pre_y2[m - 1]
        for k in range(min_leaf, m - min_leaf + 1):
            if not xs[k] > xs[k - 1]:
                continue
            sl = pre_y[k - 1]
            sl2 = pre_y2[k - 1]
            sr = total_y - sl
            sr2 = total_y2 - sl2
            sse = (sl2 - sl * sl / k) + (sr2 - sr * sr / (m - k))
            if sse < best_sse:
                best_sse = sse
                best_f = <int>f
                best_thr = (xs[k - 1] + xs[k]) / 2.0
    return best_f, best_thr, best_sse

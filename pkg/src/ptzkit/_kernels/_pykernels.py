"""Pure-Python/numpy kernel fallback.

Mirrors ``_core.pyx`` operation for operation.  The split-search keeps the
exact floating-point evaluation order of the compiled version (stable argsort,
sequential prefix sums, identical expressions) so both backends produce
bit-identical trees.
"""

from __future__ import annotations

import numpy as np

# Default vocabulary layout, ids relative to base 0.
ID_PAN, ID_TILT, ID_ZOOM = 0, 1, 2
ID_POS, ID_NEG = 3, 4
ID_END = 14
MAG_VALUES = (1, 2, 5, 10, 20, 50, 100, 200, 500)

_MAG_ID_OFFSET = {1: 0, 2: 1, 5: 2}


def max_seq_len(levels: int) -> int:
    # 3 markers + 2 signs + 3 dims * 3 tokens/digit * levels + END
    return 6 + 9 * levels


def greedy_magnitude_counts(values) -> np.ndarray:
    """Greedy magnitude-token count for each value (digits over basis {5,2,1})."""
    v = np.abs(np.asarray(values, dtype=np.int64))
    counts = np.zeros(v.shape, dtype=np.int64)
    while np.any(v > 0):
        d = v % 10
        r = d % 5
        counts += d // 5 + r // 2 + r % 2
        v //= 10
    return counts


def _emit_magnitudes(value: int, levels: int, out: list[int]) -> None:
    for level in range(levels - 1, -1, -1):
        digit = (value // 10**level) % 10
        a5 = digit // 5
        rest = digit % 5
        a2 = rest // 2
        a1 = rest % 2
        out.extend([5 + 3 * level + 2] * a5)
        out.extend([5 + 3 * level + 1] * a2)
        out.extend([5 + 3 * level + 0] * a1)


def _encode_one(pan: int, tilt: int, zoom: int, levels: int) -> list[int]:
    out = [ID_PAN]
    if pan != 0:
        out.append(ID_POS if pan > 0 else ID_NEG)
        _emit_magnitudes(abs(pan), levels, out)
    out.append(ID_TILT)
    if tilt != 0:
        out.append(ID_POS if tilt > 0 else ID_NEG)
        _emit_magnitudes(abs(tilt), levels, out)
    out.append(ID_ZOOM)
    if zoom != 0:
        _emit_magnitudes(zoom, levels, out)
    out.append(ID_END)
    return out


def _decode_one(ids, n: int, limit: int):
    """Strict canonical decode; returns (pan, tilt, zoom) or None on any violation."""
    pos = 0
    vals = [0, 0, 0]
    for axis in range(3):
        if pos >= n or ids[pos] != axis:
            return None
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
                return None
            prev = mv
            total += mv
            nmags += 1
            pos += 1
        if have_sign and nmags == 0:
            return None
        if axis < 2 and nmags > 0 and not have_sign:
            return None
        if total > limit:
            return None
        vals[axis] = sign * total
    if pos != n - 1 or ids[pos] != ID_END:
        return None
    return vals[0], vals[1], vals[2]


def encode_actions(pan, tilt, zoom, levels: int = 3):
    """Canonical token-id sequences for a batch of actions.

    Returns (tokens, lengths) where tokens is int64[n, max_seq_len(levels)]
    padded with -1.
    """
    if levels < 1 or levels > 6:
        raise ValueError("levels must be in [1, 6]")
    pan = np.asarray(pan, dtype=np.int64)
    tilt = np.asarray(tilt, dtype=np.int64)
    zoom = np.asarray(zoom, dtype=np.int64)
    n = pan.shape[0]
    width = max_seq_len(levels)
    tokens = np.full((n, width), -1, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i in range(n):
        seq = _encode_one(int(pan[i]), int(tilt[i]), int(zoom[i]), levels)
        tokens[i, : len(seq)] = seq
        lengths[i] = len(seq)
    return tokens, lengths


def roundtrip_failures(pan, tilt, zoom, levels: int = 3) -> int:
    """Count of actions whose encode->decode round trip does not reproduce them."""
    if levels < 1 or levels > 6:
        raise ValueError("levels must be in [1, 6]")
    pan = np.asarray(pan, dtype=np.int64)
    tilt = np.asarray(tilt, dtype=np.int64)
    zoom = np.asarray(zoom, dtype=np.int64)
    limit = 10**levels - 1
    failures = 0
    for i in range(pan.shape[0]):
        p, t, z = int(pan[i]), int(tilt[i]), int(zoom[i])
        seq = _encode_one(p, t, z, levels)
        back = _decode_one(seq, len(seq), limit)
        if back is None or back != (p, t, z):
            failures += 1
    return failures


def roundtrip_exhaustive(
    pan_lo: int,
    pan_hi: int,
    tilt_lo: int,
    tilt_hi: int,
    zoom_lo: int,
    zoom_hi: int,
    levels: int = 3,
) -> int:
    """Round-trip failure count over an inclusive integer grid of actions."""
    if levels < 1 or levels > 6:
        raise ValueError("levels must be in [1, 6]")
    limit = 10**levels - 1
    failures = 0
    for p in range(pan_lo, pan_hi + 1):
        for t in range(tilt_lo, tilt_hi + 1):
            for z in range(zoom_lo, zoom_hi + 1):
                seq = _encode_one(p, t, z, levels)
                back = _decode_one(seq, len(seq), limit)
                if back is None or back != (p, t, z):
                    failures += 1
    return failures


def best_split(x, y, idx, min_leaf: int):
    """Best variance-reducing axis-aligned split over samples ``idx``.

    Returns (feature, threshold, sse) with sse the summed child squared error,
    or (-1, 0.0, inf) when no valid split exists.  Candidate thresholds are
    midpoints between consecutive distinct sorted values; children must keep
    at least ``min_leaf`` samples.  Ties keep the lowest feature index and
    then the lowest threshold.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    m = idx.shape[0]
    best_f = -1
    best_thr = 0.0
    best_sse = np.inf
    if m < 2 * min_leaf:
        return best_f, best_thr, best_sse
    for f in range(x.shape[1]):
        xv = x[idx, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        if xs[0] == xs[m - 1]:
            continue
        yo = y[idx][order]
        cy = np.cumsum(yo)
        cy2 = np.cumsum(yo * yo)
        total_y = cy[m - 1]
        total_y2 = cy2[m - 1]
        ks = np.arange(min_leaf, m - min_leaf + 1, dtype=np.int64)
        valid = xs[ks] > xs[ks - 1]
        if not np.any(valid):
            continue
        ks = ks[valid]
        sl = cy[ks - 1]
        sl2 = cy2[ks - 1]
        sr = total_y - sl
        sr2 = total_y2 - sl2
        sse = (sl2 - sl * sl / ks) + (sr2 - sr * sr / (m - ks))
        j = int(np.argmin(sse))
        if sse[j] < best_sse:
            best_sse = float(sse[j])
            best_f = f
            k = int(ks[j])
            best_thr = (xs[k - 1] + xs[k]) / 2.0
    return best_f, best_thr, best_sse

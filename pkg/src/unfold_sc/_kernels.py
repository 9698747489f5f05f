"""Row-batched shrinkage kernels.

Two implementations are kept side by side: numba-compiled loops and plain
numpy. They produce bit-identical results. The active pair is picked at import
time from ``UNFOLD_SC_NUMBA`` ("0" forces numpy; anything else uses numba when
it can be imported).
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def soft_threshold_rows_np(z, b):
    """Soft threshold each row of ``z`` by its own threshold ``b[row]``.

    Returns ``(out, active)`` where ``active`` marks ``|z| > b``.
    """
    bb = b[:, None]
    active = np.abs(z) > bb
    out = np.where(active, np.sign(z) * (np.abs(z) - bb), 0.0)
    return out, active


def support_select_rows_np(z, b, k):
    """Support-selection shrinkage on each row.

    The ``k`` largest magnitudes of a row (ties to the lower index) pass
    through untouched when above threshold; other entries above threshold are
    soft-thresholded. Returns ``(out, active, selected)``.
    """
    out, active = soft_threshold_rows_np(z, b)
    selected = np.zeros(z.shape, dtype=np.bool_)
    if k > 0:
        order = np.argsort(-np.abs(z), axis=1, kind="stable")
        np.put_along_axis(selected, order[:, :k], True, axis=1)
        keep = selected & active
        out = np.where(keep, z, out)
    return out, active, selected


if HAS_NUMBA:

    @njit(cache=True)
    def soft_threshold_rows_nb(z, b):
        rows, cols = z.shape
        out = np.zeros((rows, cols))
        active = np.zeros((rows, cols), dtype=np.bool_)
        for r in range(rows):
            br = b[r]
            for c in range(cols):
                v = z[r, c]
                a = abs(v)
                if a > br:
                    active[r, c] = True
                    out[r, c] = np.sign(v) * (a - br)
        return out, active

    @njit(cache=True)
    def support_select_rows_nb(z, b, k):
        rows, cols = z.shape
        out, active = soft_threshold_rows_nb(z, b)
        selected = np.zeros((rows, cols), dtype=np.bool_)
        kk = min(k, cols)
        if kk > 0:
            top_val = np.empty(kk)
            top_idx = np.empty(kk, dtype=np.int64)
            for r in range(rows):
                # top-k by insertion, descending; strict compares keep the lower index on ties
                filled = 0
                for c in range(cols):
                    v = abs(z[r, c])
                    if filled == kk and not v > top_val[kk - 1]:
                        continue
                    pos = filled if filled < kk else kk - 1
                    while pos > 0 and v > top_val[pos - 1]:
                        if pos < kk:
                            top_val[pos] = top_val[pos - 1]
                            top_idx[pos] = top_idx[pos - 1]
                        pos -= 1
                    top_val[pos] = v
                    top_idx[pos] = c
                    if filled < kk:
                        filled += 1
                for j in range(kk):
                    c = top_idx[j]
                    selected[r, c] = True
                    if active[r, c]:
                        out[r, c] = z[r, c]
        return out, active, selected

else:  # pragma: no cover
    soft_threshold_rows_nb = soft_threshold_rows_np
    support_select_rows_nb = support_select_rows_np


def numba_enabled():
    return HAS_NUMBA and os.environ.get("UNFOLD_SC_NUMBA", "1") != "0"


if numba_enabled():
    soft_threshold_rows = soft_threshold_rows_nb
    support_select_rows = support_select_rows_nb
else:
    soft_threshold_rows = soft_threshold_rows_np
    support_select_rows = support_select_rows_np

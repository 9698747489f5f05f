"""Soft thresholding, support-selection thresholding and the error-based threshold."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import as_matrix


@dataclass(frozen=True)
class ThresholdSpec:
    """Either a fixed threshold ``b`` or an error-based one ``rho * ||U(Ax - y)||_p + alpha``."""

    kind: str = "fixed"
    b: float = 0.0
    rho: float = 0.0
    norm_p: int = 1
    alpha: float = 0.0
    support_fraction: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "ebt"):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if min(self.b, self.rho, self.alpha) < 0:
            raise ValueError("threshold parameters must be nonnegative")
        if self.norm_p not in (1, 2):
            raise ValueError("norm_p must be 1 or 2")
        if self.support_fraction is not None and not 0 <= self.support_fraction <= 100:
            raise ValueError("support_fraction must lie in [0, 100]")


def selection_count(p_percent, length):
    """Number of coordinates in the top-``p%`` set: ``ceil(p * length / 100)``."""
    if not 0 <= p_percent <= 100:
        raise ValueError(f"p_percent must lie in [0, 100], got {p_percent}")
    # rounding first keeps 0.6*3 = 1.7999999999999998 style noise out of ceil
    return min(length, math.ceil(round(p_percent * length / 100.0, 9)))


def _rows(v):
    return np.ascontiguousarray(np.atleast_2d(np.asarray(v, dtype=np.float64)))


def _row_thresholds(b, rows):
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 0):
        raise ValueError("threshold must be nonnegative")
    return np.ascontiguousarray(np.broadcast_to(b, (rows,)))


def soft_threshold(v, b):
    """Elementwise ``sign(v) * max(|v| - b, 0)``.

    ``b`` is a scalar, or one threshold per row when ``v`` is 2-D.
    """
    v = np.asarray(v, dtype=np.float64)
    z = _rows(v)
    out, _ = _kernels.soft_threshold_rows(z, _row_thresholds(b, z.shape[0]))
    return out.reshape(v.shape)


def support_select_threshold(v, b, p_percent):
    """Support-selection shrinkage of a single vector.

    The ``ceil(p% * len)`` largest magnitudes (ties to the lower index) form
    ``S_p``. Entries above ``b`` pass unchanged inside ``S_p`` and are
    soft-thresholded outside it; everything else becomes 0.

    Returns the shrunk vector and ``S_p`` as a frozenset of indices.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("support_select_threshold works on a single vector")
    k = selection_count(p_percent, v.size)
    out, _, selected = _kernels.support_select_rows(_rows(v), _row_thresholds(b, 1), k)
    return out[0], frozenset(np.flatnonzero(selected[0]).tolist())


def shrink_rows(z, b_rows, k):
    """Batched shrink used by the unfolded networks.

    Returns ``(out, active, selected)``; ``selected`` is all-False when ``k == 0``.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    b_rows = np.ascontiguousarray(b_rows, dtype=np.float64)
    if k > 0:
        return _kernels.support_select_rows(z, b_rows, k)
    out, active = _kernels.soft_threshold_rows(z, b_rows)
    return out, active, np.zeros_like(active)


def lp_norm_rows(v, p):
    if p == 1:
        return np.sum(np.abs(v), axis=-1)
    return np.sqrt(np.sum(v * v, axis=-1))


def ebt_threshold(u, a, x, y, rho, norm_p=1, alpha=0.0):
    """``rho * ||U (A x - y)||_p + alpha`` for one sample or a batch of rows."""
    if rho < 0 or alpha < 0:
        raise ValueError("rho and alpha must be nonnegative")
    if norm_p not in (1, 2):
        raise ValueError("norm_p must be 1 or 2")
    mat = as_matrix(a)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    resid = x @ mat.T - y
    return rho * lp_norm_rows(resid @ np.asarray(u).T, norm_p) + alpha

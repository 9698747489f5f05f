"""ISTA / FISTA and their error-based-threshold variants, with full tracing.

All runs start from ``x^(0) = 0`` and execute a fixed iteration budget; there
is no early stopping. The objective tracked is ``0.5 ||y - Ax||^2 + lam ||x||_1``,
the function whose proximal-gradient iteration ISTA is.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import Dictionary, as_matrix, spectral_step
from .shrinkage import lp_norm_rows, shrink_rows
from .trace import SolverTrace, nmse_db_rows


class ClassicalVariant(str, enum.Enum):
    ISTA = "ista"
    FISTA = "fista"
    EBT_ISTA = "ebt_ista"
    EBT_FISTA = "ebt_fista"

    @property
    def ebt(self):
        return self in (ClassicalVariant.EBT_ISTA, ClassicalVariant.EBT_FISTA)

    @property
    def momentum(self):
        return self in (ClassicalVariant.FISTA, ClassicalVariant.EBT_FISTA)


@dataclass(frozen=True)
class ClassicalConfig:
    lam: float
    max_iters: int = 200
    variant: ClassicalVariant = ClassicalVariant.ISTA
    norm_p: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", ClassicalVariant(self.variant))
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.norm_p not in (1, 2):
            raise ValueError("norm_p must be 1 or 2")


def lasso_objective(a, x, y, lam):
    mat = as_matrix(a)
    r = np.asarray(x) @ mat.T - y
    return 0.5 * np.sum(r * r, axis=-1) + lam * np.sum(np.abs(x), axis=-1)


def descent_point(x, a, u, y):
    """``x - U (A x - y)`` row-wise; also returns the residual and ``U (Ax - y)``."""
    resid = x @ a.T - y
    v = resid @ u.T
    return x - v, resid, v


def _gamma(a, gamma):
    if gamma is not None:
        return gamma
    return a.gram_spectral_norm if isinstance(a, Dictionary) else spectral_step(a)


def ista_step(a, gamma, lam, x, y):
    """One ISTA update ``sh_{lam/gamma}((I - A^T A / gamma) x + A^T y / gamma)``."""
    mat = as_matrix(a)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    yb = np.atleast_2d(np.asarray(y, dtype=np.float64))
    z, _, _ = descent_point(xb, mat, mat.T / gamma, yb)
    out, _, _ = shrink_rows(z, np.full(z.shape[0], lam / gamma), 0)
    return out[0] if single else out


def run(cfg, a, y, x_true=None, gamma=None, keep_iterates=True):
    """Run the configured classical solver on one observation or a batch of rows."""
    mat = as_matrix(a)
    gamma = _gamma(a, gamma)
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    yb = np.atleast_2d(y)
    rows = yb.shape[0]
    u = mat.T / gamma
    variant = cfg.variant

    x = np.zeros((rows, mat.shape[1]))
    point = x
    t_k = 1.0
    trace = SolverTrace(estimates=[x], single=single, steps=cfg.max_iters)

    def record(xk):
        trace.objective.append(lasso_objective(mat, xk, yb, cfg.lam))
        trace.support_sizes.append(np.count_nonzero(xk, axis=1))
        if x_true is not None:
            trace.nmse.append(nmse_db_rows(xk, x_true))

    record(x)
    fixed = np.full(rows, cfg.lam / gamma)
    for _ in range(cfg.max_iters):
        z, resid, _ = descent_point(point, mat, u, yb)
        if variant.ebt:
            b = cfg.lam * lp_norm_rows(resid, cfg.norm_p) / gamma
        else:
            b = fixed
        x_new, _, _ = shrink_rows(z, b, 0)
        trace.thresholds.append(np.array(b, copy=True))
        if variant.momentum:
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k)) / 2.0
            point = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
            trace.momentum.append(t_next)
            t_k = t_next
        else:
            point = x_new
        x = x_new
        record(x)
        if keep_iterates:
            trace.estimates.append(x)
    if not keep_iterates and cfg.max_iters > 0:
        trace.estimates.append(x)
    return trace


def ista_run(cfg, a, y, **kw):
    return run(_with_variant(cfg, ClassicalVariant.ISTA), a, y, **kw)


def fista_run(cfg, a, y, **kw):
    return run(_with_variant(cfg, ClassicalVariant.FISTA), a, y, **kw)


def ebt_classical_run(cfg, a, y, **kw):
    if not cfg.variant.ebt:
        raise ValueError(f"ebt_classical_run needs an EBT variant, got {cfg.variant.value}")
    return run(cfg, a, y, **kw)


def _with_variant(cfg, variant):
    return ClassicalConfig(cfg.lam, cfg.max_iters, variant, cfg.norm_p)

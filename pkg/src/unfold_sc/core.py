"""Dictionary type, spectral step size, generalized coherence and analytic weights."""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .container import read_container, write_container

log = logging.getLogger(__name__)

POWER_TOL = 1e-10
POWER_MAX_STEPS = 10_000
STEP_INFLATION = 1.0 + 1e-6
EXACT_LP_MAX_COLUMNS = 64
GRAM_REG = 1e-10


class DictionaryError(ValueError):
    pass


class PowerIterationError(RuntimeError):
    pass


class CoherenceError(ValueError):
    pass


def as_matrix(a):
    """Accept a :class:`Dictionary` or anything array-like; return a float64 matrix."""
    if isinstance(a, Dictionary):
        return a.a
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DictionaryError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def spectral_step(a):
    """Upper bound on the largest eigenvalue of ``A^T A``.

    Power iteration on whichever of ``A A^T`` / ``A^T A`` is smaller, stopped
    when the Rayleigh quotient moves by less than 1e-10 relative, then inflated
    by ``1 + 1e-6`` so the result safely majorizes the true eigenvalue.
    """
    mat = as_matrix(a)
    gram = mat @ mat.T if mat.shape[0] <= mat.shape[1] else mat.T @ mat
    rng = np.random.default_rng(0)
    v = rng.standard_normal(gram.shape[0]) + 1.0
    v /= np.linalg.norm(v)
    lam = float(v @ gram @ v)
    for _ in range(POWER_MAX_STEPS):
        w = gram @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            raise PowerIterationError("power iteration collapsed: matrix is zero")
        v = w / nrm
        new = float(v @ gram @ v)
        if abs(new - lam) <= POWER_TOL * abs(new):
            return new * STEP_INFLATION
        lam = new
    raise PowerIterationError(
        f"power iteration did not reach {POWER_TOL:g} relative tolerance in "
        f"{POWER_MAX_STEPS} steps (last estimate {lam:.6g})"
    )


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Over-complete sensing matrix with cached step size and column norms."""

    a: np.ndarray
    gram_spectral_norm: float
    column_norms: np.ndarray = field(repr=False)

    @property
    def m(self):
        return self.a.shape[0]

    @property
    def n(self):
        return self.a.shape[1]

    @property
    def shape(self):
        return self.a.shape

    @classmethod
    def from_array(cls, a, require_overcomplete=True):
        mat = np.array(a, dtype=np.float64, copy=True)
        if mat.ndim != 2:
            raise DictionaryError(f"expected a 2-D matrix, got shape {mat.shape}")
        m, n = mat.shape
        if require_overcomplete and not n > m:
            raise DictionaryError(f"dictionary must be over-complete (n > m), got {m}x{n}")
        norms = np.linalg.norm(mat, axis=0)
        if np.any(norms == 0.0):
            raise DictionaryError(f"zero columns at {np.flatnonzero(norms == 0.0).tolist()}")
        mat.setflags(write=False)
        norms.setflags(write=False)
        return cls(a=mat, gram_spectral_norm=spectral_step(mat), column_norms=norms)


def save_dictionary(path, d, meta=None):
    extra = dict(meta or {})
    extra.update(m=d.m, n=d.n)
    write_container(path, {"a": d.a}, extra)


def load_dictionary(path):
    tensors, header = read_container(path)
    a = tensors["a"]
    if a.shape != (header["m"], header["n"]):
        raise DictionaryError(f"{path}: header shape disagrees with payload")
    return Dictionary.from_array(a)


def load_dictionary_csv(path):
    return Dictionary.from_array(np.loadtxt(path, delimiter=",", ndmin=2))


@dataclass(frozen=True, eq=False)
class SparseCode:
    x: np.ndarray

    @property
    def support(self):
        return frozenset(np.flatnonzero(self.x).tolist())


class CoherenceMethod(str, enum.Enum):
    EXACT_LP = "exact_lp"
    CLASSICAL_UPPER_BOUND = "classical_upper_bound"


@dataclass(frozen=True, eq=False)
class CoherenceResult:
    mu: float
    w: np.ndarray
    method: CoherenceMethod
    fell_back: bool = False


def off_diagonal_max(w, a):
    """``max_{i != j} |(W A)_{ij}|``."""
    g = np.abs(w @ a)
    np.fill_diagonal(g, 0.0)
    return float(g.max()) if g.size > 1 else 0.0


def _classical_witness(mat):
    norms2 = np.sum(mat * mat, axis=0)
    return mat.T / norms2[:, None]


def _lp_row(mat, i):
    m, n = mat.shape
    others = np.delete(mat, i, axis=1).T  # (n-1, m)
    ones = np.ones((n - 1, 1))
    # variables (w, t): minimize t  s.t.  |w . A_j| <= t (j != i),  w . A_i = 1
    a_ub = np.vstack([np.hstack([others, -ones]), np.hstack([-others, -ones])])
    b_ub = np.zeros(2 * (n - 1))
    a_eq = np.append(mat[:, i], 0.0)[None, :]
    c = np.zeros(m + 1)
    c[-1] = 1.0
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=[1.0],
        bounds=[(None, None)] * (m + 1),
        method="highs",
    )
    if res.status != 0:
        return None
    w = res.x[:m]
    return w / (w @ mat[:, i])


def generalized_coherence(a, mode=CoherenceMethod.EXACT_LP):
    """Generalized coherence ``mu(A)`` and a witness ``W`` attaining it.

    ``exact_lp`` solves the row-wise minimax program

        min_w max_{j != i} |w . A_j|   s.t.  w . A_i = 1

    as a linear program for every row. Above 64 columns, or when a row LP
    fails, the result falls back to the classical witness ``W_i = A_i^T /
    ||A_i||^2`` and ``fell_back`` is set. ``mu`` is always recomputed from the
    returned ``W``.
    """
    mat = as_matrix(a)
    mode = CoherenceMethod(mode)
    norms = np.linalg.norm(mat, axis=0)
    if np.any(norms == 0.0):
        raise CoherenceError(
            f"row program infeasible: zero columns at {np.flatnonzero(norms == 0.0).tolist()}"
        )
    n = mat.shape[1]

    if n == 1:
        return CoherenceResult(0.0, _classical_witness(mat), mode)

    if mode is CoherenceMethod.EXACT_LP and n <= EXACT_LP_MAX_COLUMNS:
        rows = []
        for i in range(n):
            w_i = _lp_row(mat, i)
            if w_i is None:
                log.warning("coherence LP stalled on row %d; using classical witness", i)
                break
            rows.append(w_i)
        else:
            w = np.array(rows)
            return CoherenceResult(off_diagonal_max(w, mat), w, CoherenceMethod.EXACT_LP)
        fell_back = True
    else:
        fell_back = mode is CoherenceMethod.EXACT_LP

    w = _classical_witness(mat)
    return CoherenceResult(
        off_diagonal_max(w, mat), w, CoherenceMethod.CLASSICAL_UPPER_BOUND, fell_back
    )


def alista_weight(a):
    """Analytic weight shared by the ALISTA-style layers.

    Row ``i`` is ``((A A^T)^{-1} A_i)^T`` rescaled so that ``W_i . A_i = 1``.
    ``A A^T`` gets ``1e-10 * I`` added when it is numerically singular.
    """
    mat = as_matrix(a)
    gram = mat @ mat.T
    if not np.isfinite(np.linalg.cond(gram)) or np.linalg.cond(gram) > 1e12:
        gram = gram + GRAM_REG * np.eye(gram.shape[0])
    try:
        w = np.linalg.solve(gram, mat).T
    except np.linalg.LinAlgError as exc:
        raise DictionaryError("A A^T is singular even after regularization") from exc
    diag = np.einsum("ij,ji->i", w, mat)
    if np.any(~np.isfinite(diag)) or np.any(np.abs(diag) < 1e-12):
        raise DictionaryError("A A^T is singular even after regularization")
    return w / diag[:, None]

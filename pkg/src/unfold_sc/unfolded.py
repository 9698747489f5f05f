"""Unfolded networks sharing the coupled layer ``x <- shrink(x - U (A x - y), b)``.

Variants differ only in how ``U`` and the threshold are produced:

* ``lista_cp`` / ``lista_ss``: learned ``U^(t)``, learned scalar ``b^(t)``.
* ``ebt_lista`` / ``ebt_lista_ss``: learned ``U^(t)``, threshold
  ``rho^(t) ||U^(t)(A x - y)||_p (+ alpha^(t))``.
* ``alista`` / ``ebt_alista``: ``U^(t) = gamma^(t) W`` with a fixed analytic
  ``W`` and learned per-layer step ``gamma^(t)``.

``_ss`` kinds use support-selection shrinkage with ``p^(t) = min(t p_step, p_max)``.
The ``W^(t) = I - U^(t) A`` coupling is structural: only ``U^(t)`` is stored.
"""

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .core import CoherenceMethod, alista_weight, as_matrix, generalized_coherence, spectral_step
from .core import Dictionary
from .shrinkage import lp_norm_rows, selection_count, shrink_rows
from .trace import SolverTrace

log = logging.getLogger(__name__)

RHO_INIT = 0.02
LAMBDA_INIT = 0.1
# Oracle thresholds sit exactly on the bound and the LP witness saturates
# |WA|_ij = mu, so ties are common. Rounding in z scales with the signal, not
# with b, hence an absolute headroom of ORACLE_MARGIN * sup ||x_s||_1.
ORACLE_MARGIN = 1e-12


class ShapeError(ValueError):
    pass


class Kind(str, enum.Enum):
    LISTA_CP = "lista_cp"
    LISTA_SS = "lista_ss"
    EBT_LISTA = "ebt_lista"
    EBT_LISTA_SS = "ebt_lista_ss"
    ALISTA = "alista"
    EBT_ALISTA = "ebt_alista"

    @property
    def ebt(self):
        return self in (Kind.EBT_LISTA, Kind.EBT_LISTA_SS, Kind.EBT_ALISTA)

    @property
    def alista(self):
        return self in (Kind.ALISTA, Kind.EBT_ALISTA)

    @property
    def needs_schedule(self):
        return self in (Kind.LISTA_SS, Kind.EBT_LISTA_SS)


@dataclass(frozen=True)
class Variant:
    kind: Kind
    norm_p: int = 1
    ss_schedule: tuple | None = None
    noise_alpha_enabled: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.ss_schedule is not None:
            object.__setattr__(self, "ss_schedule", tuple(float(v) for v in self.ss_schedule))
        if self.norm_p not in (1, 2):
            raise ValueError("norm_p must be 1 or 2")
        if self.kind.needs_schedule and self.ss_schedule is None:
            raise ValueError(f"{self.kind.value} requires ss_schedule=(p_step, p_max)")
        if self.ss_schedule is not None:
            if self.kind in (Kind.LISTA_CP, Kind.EBT_LISTA):
                raise ValueError(f"{self.kind.value} takes no ss_schedule; use the _ss kind")
            p_step, p_max = self.ss_schedule
            if p_step < 0 or not 0 <= p_max <= 100:
                raise ValueError(f"bad ss_schedule {self.ss_schedule}")
        if self.noise_alpha_enabled and not self.kind.ebt:
            raise ValueError("alpha compensation only applies to EBT kinds")

    @property
    def name(self):
        parts = [self.kind.value]
        if self.kind.ebt and self.norm_p == 2:
            parts.append("l2")
        if self.kind.alista and self.ss_schedule is not None:
            parts.append("ss")
        if self.noise_alpha_enabled:
            parts.append("alpha")
        return "_".join(parts)

    def p_at(self, t):
        if self.ss_schedule is None:
            return 0.0
        p_step, p_max = self.ss_schedule
        return min(t * p_step, p_max)

    def p_schedule(self, depth):
        return [self.p_at(t) for t in range(depth)]

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "norm_p": self.norm_p,
            "ss_schedule": list(self.ss_schedule) if self.ss_schedule is not None else None,
            "noise_alpha_enabled": self.noise_alpha_enabled,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            Kind(d["kind"]),
            int(d.get("norm_p", 1)),
            tuple(d["ss_schedule"]) if d.get("ss_schedule") is not None else None,
            bool(d.get("noise_alpha_enabled", False)),
        )


_NAME_RE = re.compile(r"^(u|b|rho|alpha|gamma)\.(\d+)$")
NONNEGATIVE = ("b", "rho", "alpha", "gamma")


@dataclass(eq=False)
class NetworkParams:
    """Named per-layer tensors: ``u.t``, ``gamma.t``, ``b.t``, ``rho.t``, ``alpha.t`` and ``w_analytic``."""

    depth: int
    tensors: dict
    seed: int = 0

    def copy(self):
        return NetworkParams(self.depth, {k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def __getitem__(self, name):
        return self.tensors[name]

    def trainable(self, layers=None):
        """Names of learnable tensors, optionally restricted to a set of layer indices."""
        out = []
        for name in self.tensors:
            match = _NAME_RE.match(name)
            if match and (layers is None or int(match.group(2)) in layers):
                out.append(name)
        return out

    def layer_values(self, prefix):
        return np.array([float(self.tensors[f"{prefix}.{t}"]) for t in range(self.depth)])

    def u(self, t):
        if "w_analytic" in self.tensors:
            return self.tensors[f"gamma.{t}"] * self.tensors["w_analytic"]
        return self.tensors[f"u.{t}"]


def build_params(variant, depth, weight, b=0.0, rho=RHO_INIT, gamma=1.0, seed=0):
    """Params with every layer's ``U`` equal to ``weight`` (scaled by ``gamma`` for ALISTA kinds)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    tensors = {}
    if variant.kind.alista:
        tensors["w_analytic"] = np.array(weight, dtype=np.float64, copy=True)
    for t in range(depth):
        if variant.kind.alista:
            tensors[f"gamma.{t}"] = np.array(float(gamma))
        else:
            tensors[f"u.{t}"] = np.array(weight, dtype=np.float64, copy=True)
        if variant.kind.ebt:
            tensors[f"rho.{t}"] = np.array(float(rho))
            if variant.noise_alpha_enabled:
                tensors[f"alpha.{t}"] = np.array(0.0)
        else:
            tensors[f"b.{t}"] = np.array(float(b))
    return NetworkParams(depth, tensors, seed)


def init_params(variant, a, d, seed=0, lam_init=LAMBDA_INIT):
    """ISTA-consistent start: ``U = A^T / gamma``, ``b = lam_init / gamma``, ``rho = 0.02``.

    ALISTA kinds use the analytic weight with unit step sizes instead. No
    randomness is involved; ``seed`` is only recorded.
    """
    mat = as_matrix(a)
    step = a.gram_spectral_norm if isinstance(a, Dictionary) else spectral_step(mat)
    weight = alista_weight(mat) if variant.kind.alista else mat.T / step
    return build_params(variant, d, weight, b=lam_init / step, rho=RHO_INIT, seed=seed)


@dataclass(eq=False)
class LayerCache:
    x: np.ndarray
    resid: np.ndarray
    v: np.ndarray
    z: np.ndarray
    norm: np.ndarray | None
    b: np.ndarray
    active: np.ndarray
    selected: np.ndarray
    out: np.ndarray


def _check_shapes(params, mat, yb):
    m, n = mat.shape
    if yb.shape[1] != m:
        raise ShapeError(f"observation length {yb.shape[1]} != dictionary rows {m}")
    u0 = params.tensors.get("w_analytic", params.tensors.get("u.0"))
    if u0 is None or u0.shape != (n, m):
        got = None if u0 is None else u0.shape
        raise ShapeError(f"layer weight shape {got} != ({n}, {m})")


def apply_layer(params, variant, mat, t, x, yb, b_override=None):
    """One layer on a batch of rows; returns a :class:`LayerCache` for backprop."""
    u = params.u(t)
    z_resid = x @ mat.T - yb
    v = z_resid @ u.T
    z = x - v
    norm = None
    if b_override is not None:
        b = np.broadcast_to(np.asarray(b_override, dtype=np.float64), (x.shape[0],)).copy()
        if variant.kind.ebt:
            norm = lp_norm_rows(v, variant.norm_p)
    elif variant.kind.ebt:
        norm = lp_norm_rows(v, variant.norm_p)
        b = params.tensors[f"rho.{t}"] * norm
        if variant.noise_alpha_enabled:
            b = b + params.tensors[f"alpha.{t}"]
    else:
        b = np.full(x.shape[0], float(params.tensors[f"b.{t}"]))
    k = selection_count(variant.p_at(t), mat.shape[1]) if variant.ss_schedule is not None else 0
    out, active, selected = shrink_rows(z, b, k)
    return LayerCache(x, z_resid, v, z, norm, b, active, selected, out)


def run_layers(params, variant, a, y, depth_limit=None):
    """Forward pass returning ``(caches, batch_observations, was_single)``."""
    mat = as_matrix(a)
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    yb = np.atleast_2d(y)
    _check_shapes(params, mat, yb)
    depth = params.depth if depth_limit is None else depth_limit
    if not 0 <= depth <= params.depth:
        raise ValueError(f"depth_limit {depth_limit} outside [0, {params.depth}]")
    x = np.zeros((yb.shape[0], mat.shape[1]))
    caches = []
    for t in range(depth):
        cache = apply_layer(params, variant, mat, t, x, yb)
        caches.append(cache)
        x = cache.out
    return caches, yb, single


def forward(params, variant, a, y, depth_limit=None):
    """Run the network on one observation (1-D) or a batch of rows; trace every layer."""
    caches, yb, single = run_layers(params, variant, a, y, depth_limit)
    x0 = np.zeros((yb.shape[0], as_matrix(a).shape[1]))
    return SolverTrace(
        estimates=[x0] + [c.out for c in caches],
        thresholds=[c.b for c in caches],
        selected=[c.selected for c in caches],
        support_sizes=[np.zeros(yb.shape[0], dtype=int)]
        + [np.count_nonzero(c.out, axis=1) for c in caches],
        single=single,
    )


@dataclass(eq=False)
class OracleThresholds:
    """Theory-suggested thresholds and the params they were applied to."""

    kind: str  # "b" or "rho"
    values: np.ndarray
    mu: float
    s: int
    hypothesis_ok: bool
    params: NetworkParams = field(repr=False)


def oracle_thresholds(a, variant, codes, depth, params=None, coherence=None):
    """Thresholds that guarantee no false positives on a known noiseless batch.

    Fixed-threshold kinds get ``b^(t) = mu(A) sup ||x^(t) - x_s||_1`` from a
    layer-by-layer sweep; EBT kinds get the constant ``rho = mu / (1 - mu s)``
    with ``s`` the largest support in the batch. Without ``params`` every
    layer's ``U`` is the coherence witness ``W`` (so ``U`` lies in the
    minimizing set). ``hypothesis_ok`` is False when ``mu s >= 0.5``.
    """
    mat = as_matrix(a)
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if coherence is None:
        coherence = generalized_coherence(mat, CoherenceMethod.EXACT_LP)
    mu = coherence.mu
    s = int(np.max(np.count_nonzero(codes, axis=1))) if codes.size else 0
    ok = mu * s < 0.5
    if not ok:
        log.warning("mu(A) * s = %.4f >= 0.5: no-false-positive hypothesis violated", mu * s)
    if params is None:
        params = build_params(variant, depth, coherence.w)
    else:
        params = params.copy()
    ys = codes @ mat.T

    if variant.kind.ebt:
        rho = mu / (1.0 - mu * s) if mu * s < 1 else np.inf
        values = np.full(depth, rho)
        for t in range(depth):
            params.tensors[f"rho.{t}"] = np.array(rho)
        return OracleThresholds("rho", values, mu, s, ok, params)

    values = np.zeros(depth)
    headroom = ORACLE_MARGIN * float(np.max(np.sum(np.abs(codes), axis=1), initial=0.0))
    x = np.zeros_like(codes)
    for t in range(depth):
        b = mu * float(np.max(np.sum(np.abs(x - codes), axis=1))) + headroom
        values[t] = b
        params.tensors[f"b.{t}"] = np.array(b)
        x = apply_layer(params, variant, mat, t, x, ys).out
    return OracleThresholds("b", values, mu, s, ok, params)


def save_checkpoint(path, params, variant, seed=None):
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (tensor container)."""
    path = Path(path)
    manifest = {
        "variant": variant.kind.value,
        "d": params.depth,
        "norm_p": variant.norm_p,
        "ss_schedule": list(variant.ss_schedule) if variant.ss_schedule is not None else None,
        "noise_alpha_enabled": variant.noise_alpha_enabled,
        "seed": params.seed if seed is None else seed,
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    write_container(path.with_suffix(".bin"), params.tensors, {"d": params.depth})


def load_checkpoint(path):
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    tensors, _ = read_container(path.with_suffix(".bin"))
    variant = Variant(
        Kind(manifest["variant"]),
        manifest["norm_p"],
        tuple(manifest["ss_schedule"]) if manifest["ss_schedule"] is not None else None,
        manifest.get("noise_alpha_enabled", False),
    )
    return NetworkParams(manifest["d"], tensors, manifest["seed"]), variant

"""Synthetic dictionaries, sparse codes, observations and in-stream training data."""

import enum
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from .container import read_container, write_container
from .core import Dictionary, as_matrix

DEFAULT_EVAL_SIZE = 1000


class LawKind(str, enum.Enum):
    FIXED = "fixed"
    UNIFORM = "uniform"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


class AmpDist(str, enum.Enum):
    STD_GAUSSIAN = "std_gaussian"
    UNIFORM_PM_B = "uniform_pm_B"


@dataclass(frozen=True)
class SparsityLaw:
    """Distribution of ``p_b``, the per-entry probability of being zero."""

    kind: LawKind = LawKind.FIXED
    p_b: float = 0.95
    lo: float = 0.0
    hi: float = 1.0
    mean: float = 0.95
    std: float = 0.025

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        if self.kind is LawKind.FIXED:
            if not 0.0 <= self.p_b <= 1.0:
                raise ValueError(f"p_b must lie in [0, 1], got {self.p_b}")
        else:
            if not (0.0 <= self.lo < self.hi <= 1.0):
                raise ValueError(f"need 0 <= lo < hi <= 1, got lo={self.lo} hi={self.hi}")
            if self.kind is LawKind.TRUNCATED_GAUSSIAN and self.std <= 0:
                raise ValueError("truncated Gaussian needs std > 0")

    @classmethod
    def fixed(cls, p_b):
        return cls(LawKind.FIXED, p_b=p_b)

    @classmethod
    def uniform(cls, lo, hi):
        return cls(LawKind.UNIFORM, lo=lo, hi=hi)

    @classmethod
    def truncated_gaussian(cls, mean, std, lo, hi):
        return cls(LawKind.TRUNCATED_GAUSSIAN, mean=mean, std=std, lo=lo, hi=hi)

    @property
    def tag(self):
        if self.kind is LawKind.FIXED:
            return f"fixed({self.p_b:g})"
        if self.kind is LawKind.UNIFORM:
            return f"uniform({self.lo:g},{self.hi:g})"
        return f"tgauss({self.mean:g},{self.std:g},{self.lo:g},{self.hi:g})"

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    def sample_pb(self, rng, count):
        if self.kind is LawKind.FIXED:
            return np.full(count, self.p_b)
        if self.kind is LawKind.UNIFORM:
            return rng.uniform(self.lo, self.hi, size=count)
        a = (self.lo - self.mean) / self.std
        b = (self.hi - self.mean) / self.std
        return truncnorm.rvs(a, b, loc=self.mean, scale=self.std, size=count, random_state=rng)


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float = math.inf

    @property
    def noiseless(self):
        return math.isinf(self.snr_db) and self.snr_db > 0

    def to_dict(self):
        return {"snr_db": "inf" if self.noiseless else self.snr_db}

    @classmethod
    def from_value(cls, v):
        if v is None:
            return cls()
        return cls(float(v))


@dataclass(eq=False)
class Batch:
    xs: np.ndarray
    ys: np.ndarray
    seed: object
    law: SparsityLaw
    noise: NoiseSpec

    @property
    def count(self):
        return self.xs.shape[0]

    def subset(self, idx):
        return Batch(self.xs[idx], self.ys[idx], self.seed, self.law, self.noise)


def gen_dictionary(m, n, condition_number=None, seed=0):
    """Standard Gaussian ``m x n`` dictionary, optionally with a set condition number.

    With ``condition_number`` the singular values are replaced by a geometric
    ramp from ``s_max / kappa`` to ``s_max``. Columns are not normalized.
    """
    if not m < n:
        raise ValueError(f"need m < n, got m={m} n={n}")
    if condition_number is not None and condition_number < 1:
        raise ValueError(f"condition number must be >= 1, got {condition_number}")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    if condition_number is not None:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        ramp = np.geomspace(s[0] / condition_number, s[0], num=m)[::-1]
        a = (u * ramp) @ vt
    return Dictionary.from_array(a)


def gen_sparse_batch(n, count, law, amp_dist=AmpDist.STD_GAUSSIAN, bound=1.0, seed=0):
    """Bernoulli-support sparse codes, one per row.

    Every entry is zero with probability ``p_b``; non-fixed laws draw a fresh
    ``p_b`` per sample. Nonzero magnitudes are standard Gaussian or uniform on
    ``[-bound, bound]``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    p = law.sample_pb(rng, count)
    keep = rng.random((count, n)) >= p[:, None]
    if AmpDist(amp_dist) is AmpDist.STD_GAUSSIAN:
        amps = rng.standard_normal((count, n))
    else:
        amps = rng.uniform(-bound, bound, size=(count, n))
    return np.where(keep, amps, 0.0)


def gen_bounded_codes(n, count, s, bound=1.0, seed=0):
    """Codes whose support size is uniform on ``{0..s}`` with magnitudes in ``[-bound, bound]``."""
    rng = np.random.default_rng(seed)
    out = np.zeros((count, n))
    sizes = rng.integers(0, s + 1, size=count)
    for row, k in enumerate(sizes):
        idx = rng.choice(n, size=k, replace=False)
        out[row, idx] = rng.uniform(-bound, bound, size=k)
    return out


def observe(a, xs, noise=NoiseSpec(), seed=0):
    """``y = A x_s + eps`` row-wise, with ``eps`` scaled to the batch SNR.

    The SNR is measured over the whole batch against ``||A x_s||^2``. A
    zero-energy batch gets zero noise.
    """
    mat = as_matrix(a)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    clean = xs @ mat.T
    if noise.noiseless:
        return clean
    energy = float(np.sum(clean * clean))
    if energy == 0.0:
        return clean
    eps = np.random.default_rng(seed).standard_normal(clean.shape)
    target = energy / 10.0 ** (noise.snr_db / 10.0)
    eps *= math.sqrt(target / float(np.sum(eps * eps)))
    return clean + eps


def make_batch(a, count, law, noise=NoiseSpec(), seed=0, amp_dist=AmpDist.STD_GAUSSIAN):
    code_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    d = as_matrix(a)
    xs = gen_sparse_batch(d.shape[1], count, law, amp_dist, seed=code_seed)
    ys = observe(d, xs, noise, seed=noise_seed)
    return Batch(xs, ys, seed, law, noise)


def fixed_eval_sets(a, law, noise=NoiseSpec(), seeds=(10_001, 10_002), size=DEFAULT_EVAL_SIZE):
    """Frozen validation and test batches drawn from disjoint seeds."""
    val_seed, test_seed = seeds
    if val_seed == test_seed:
        raise ValueError("validation and test seeds must differ")
    return make_batch(a, size, law, noise, val_seed), make_batch(a, size, law, noise, test_seed)


class TrainingStream:
    """Endless stream of fresh seeded batches; step ``k`` uses entropy ``[seed, k]``."""

    def __init__(self, a, law, noise=NoiseSpec(), batch_size=64, seed=0, codes=None):
        self.a = a
        self.law = law
        self.noise = noise
        self.batch_size = batch_size
        self.seed = seed
        self.step = 0
        self._codes = codes

    def __iter__(self):
        return self

    def __next__(self):
        entropy = [int(self.seed), self.step]
        self.step += 1
        if self._codes is None:
            return make_batch(self.a, self.batch_size, self.law, self.noise, entropy)
        code_seed, noise_seed = np.random.SeedSequence(entropy).spawn(2)
        xs = self._codes(self.batch_size, code_seed)
        return Batch(xs, observe(self.a, xs, self.noise, noise_seed), entropy, self.law, self.noise)


def save_batch(path, batch):
    """Binary container plus a ``.json`` sidecar with law/noise/seed metadata."""
    path = Path(path)
    write_container(path, {"xs": batch.xs, "ys": batch.ys}, {"count": batch.count})
    sidecar = {
        "law": batch.law.to_dict(),
        "noise": batch.noise.to_dict(),
        "seed": batch.seed,
        "count": batch.count,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2))


def load_batch(path):
    path = Path(path)
    tensors, _ = read_container(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return Batch(
        tensors["xs"],
        tensors["ys"],
        meta["seed"],
        SparsityLaw(**meta["law"]),
        NoiseSpec.from_value(meta["noise"]["snr_db"]),
    )

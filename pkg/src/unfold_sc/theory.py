"""Executable checks of the convergence guarantees under oracle thresholds.

Each suite runs a network whose every layer matrix is the coherence witness
``W`` on noiseless codes with at most ``s`` nonzeros bounded by ``B``, and
returns :class:`PropertyResult` records rather than raising, so callers (the
CLI, the acceptance tests) can report every property.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import CoherenceMethod, as_matrix, generalized_coherence
from .datagen import gen_bounded_codes, gen_dictionary
from .shrinkage import selection_count
from .unfolded import Kind, Variant, forward, oracle_thresholds

SLACK = 1e-9
# Errors below FLOOR * ||x_s||_1 are rounding residue; ratios of them are meaningless.
FLOOR = 1e-12


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass(eq=False)
class TheoryInstance:
    a: np.ndarray
    codes: np.ndarray
    mu: float
    s: int
    coherence: object

    @property
    def hypothesis_ok(self):
        return self.mu * self.s < 0.5


def make_instance(m=40, n=42, s=2, bound=1.0, count=200, seed=0):
    a = gen_dictionary(m, n, seed=seed)
    coh = generalized_coherence(a, CoherenceMethod.EXACT_LP)
    codes = gen_bounded_codes(n, count, s, bound, seed=seed + 1)
    s_eff = int(np.max(np.count_nonzero(codes, axis=1)))
    return TheoryInstance(a, codes, coh.mu, s_eff, coh)


def _oracle_trace(inst, variant, depth):
    oracle = oracle_thresholds(inst.a, variant, inst.codes, depth, coherence=inst.coherence)
    ys = inst.codes @ as_matrix(inst.a).T
    return forward(oracle.params, variant, inst.a, ys), oracle


def _errors(trace, codes):
    return np.stack([np.linalg.norm(x - codes, axis=1) for x in trace.estimates])


def check_no_false_positive(inst, variant, depth):
    trace, _ = _oracle_trace(inst, variant, depth)
    off = inst.codes == 0
    bad = [int(np.count_nonzero(np.any((x != 0) & off, axis=1))) for x in trace.estimates[1:]]
    worst = max(bad) if bad else 0
    return PropertyResult(
        f"no_false_positive[{variant.name}]",
        worst == 0,
        f"samples with an off-support nonzero, worst layer: {worst}/{inst.codes.shape[0]}",
    )


def check_monotone_decay(inst, variant, depth):
    """Sup-over-batch l2 error never increases and ends below its starting value."""
    trace, _ = _oracle_trace(inst, variant, depth)
    errs = _errors(trace, inst.codes)
    sup = errs.max(axis=1)
    rises = [t for t in range(depth) if sup[t + 1] > sup[t]]
    nz = errs[0] > 0
    stalled = int(np.count_nonzero(errs[-1][nz] >= errs[0][nz]))
    detail = f"sup errors {_short(sup)}; {stalled}/{int(nz.sum())} samples never improve"
    if rises:
        detail += f"; increases after layers {rises}"
    return PropertyResult(
        f"monotone_decay[{variant.name}]",
        not rises and (sup[-1] < sup[0] or sup[0] == 0),
        detail,
    )


def check_decay_line(inst, variant, depth):
    """``log sup ||e^(t)||_2 <= log sup ||x_s||_1 + t (log((2s - 1) mu) + slack)``."""
    trace, _ = _oracle_trace(inst, variant, depth)
    sup = _errors(trace, inst.codes).max(axis=1)
    rate = (2 * inst.s - 1) * inst.mu
    start = float(np.max(np.sum(np.abs(inst.codes), axis=1)))
    slope = math.log(rate) + SLACK if rate > 0 else -math.inf
    bad = []
    for t, e in enumerate(sup):
        if e == 0:
            continue
        if math.log(e) > math.log(start) + t * slope + SLACK:
            bad.append(t)
    return PropertyResult(
        f"decay_line[{variant.name}]",
        not bad,
        f"rate (2s-1)mu = {rate:.4f}" + (f"; above the line at layers {bad}" if bad else ""),
    )


def check_two_phase(inst, variant, depth):
    """Once ``supp(x^(t)) = S`` and layer ``t`` selects at least ``|S|`` entries,
    ``||e^(t+1)||_2 <= (s mu + slack) ||e^(t)||_2`` per sample.

    A sample whose error is already at rounding level must stay there.
    """
    trace, _ = _oracle_trace(inst, variant, depth)
    errs = _errors(trace, inst.codes)
    truth = inst.codes != 0
    size = truth.sum(axis=1)
    n = inst.codes.shape[1]
    bound = inst.s * inst.mu + SLACK
    floor = FLOOR * np.maximum(np.sum(np.abs(inst.codes), axis=1), 1.0)
    checked = 0
    worst = 0.0
    failures = 0
    for t in range(depth):
        k = selection_count(variant.p_at(t), n)
        exact = np.all((trace.estimates[t] != 0) == truth, axis=1)
        rows = np.flatnonzero(exact & (k >= size))
        for r in rows:
            checked += 1
            before, after = errs[t, r], errs[t + 1, r]
            if before <= floor[r]:
                ok = after <= floor[r]
                ratio = 0.0 if ok else math.inf
            else:
                ratio = after / before
                ok = ratio <= bound
            worst = max(worst, ratio)
            failures += not ok
    return PropertyResult(
        f"two_phase[{variant.name}]",
        failures == 0 and checked > 0,
        f"{checked} (sample, layer) pairs in phase two, worst ratio {worst:.4g} vs s*mu = {bound:.4g}, failures {failures}",
    )


def run_suites(m=40, n=42, s=2, bound=1.0, count=200, depth=12, ss_schedule=(4.0, 10.0), seed=0):
    """All oracle-threshold property suites on one instance."""
    inst = make_instance(m, n, s, bound, count, seed)
    results = [
        PropertyResult(
            "hypothesis[mu*s<0.5]",
            inst.hypothesis_ok,
            f"mu = {inst.mu:.4f}, s = {inst.s}, mu*s = {inst.mu * inst.s:.4f}",
        )
    ]
    # the EBT oracle rho is derived for the l1 residual norm only
    plain = [Variant(Kind.LISTA_CP), Variant(Kind.EBT_LISTA)]
    for v in plain:
        results.append(check_no_false_positive(inst, v, depth))
        results.append(check_monotone_decay(inst, v, depth))
    results.append(check_decay_line(inst, plain[0], depth))
    for kind in (Kind.LISTA_SS, Kind.EBT_LISTA_SS):
        v = Variant(kind, ss_schedule=ss_schedule)
        results.append(check_no_false_positive(inst, v, depth))
        results.append(check_two_phase(inst, v, depth))
    return inst, results


def _short(v):
    return "[" + ", ".join(f"{x:.3g}" for x in v) + "]"

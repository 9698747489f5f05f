"""End-to-end acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL criterion N`` line (also repeated in the
terminal summary) before asserting. Criteria 5-7 and 10 train desk-scale
networks and take several minutes on one CPU.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import brute_force_lasso, central_difference
from test_training import GRAD_VARIANTS, perturbed_params, tiny_batch
from unfold_sc import experiments as ex
from unfold_sc.classical import ClassicalConfig, ClassicalVariant, ebt_classical_run, ista_run
from unfold_sc.config import ExperimentConfig
from unfold_sc.datagen import SparsityLaw, gen_dictionary, make_batch
from unfold_sc.theory import run_suites
from unfold_sc.training import TrainConfig, loss_and_grad
from unfold_sc.unfolded import Kind, Variant

REPORT = []
DESK_TRAIN = TrainConfig(patience_iters=400, max_stage_iters=3000)


def report(number, ok, detail, elapsed, limit):
    ok = ok and elapsed < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} ({elapsed:.1f} s, limit {limit:.0f} s)"
    REPORT.append(line)
    print(line)
    return ok


def desk_config():
    return ExperimentConfig(train=DESK_TRAIN)


def run_desk(out_dir):
    """Train, evaluate and diagnose the default variant set; write every CSV."""
    cfg = desk_config()
    out_dir.mkdir(parents=True, exist_ok=True)
    trained = ex.train_all(cfg, out_dir=out_dir)
    table = ex.evaluate(cfg, trained)
    table.write_csv(out_dir / "results.csv")
    a = ex.build_dictionary(cfg)
    _, test = ex.eval_sets(cfg, a)
    diag = ex.run_threshold_diagnostics([(v, p) for v, p, _ in trained.values()], a, test)
    diag.write_csv(out_dir / "diagnostics.csv")
    return cfg, trained, table


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    start = time.perf_counter()
    out = tmp_path_factory.mktemp("desk") / "run"
    cfg, trained, table = run_desk(out)
    return cfg, trained, table, out, time.perf_counter() - start


def test_criterion_1_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        a, y = rng.standard_normal((6, 12)), rng.standard_normal(6)
        got = ista_run(ClassicalConfig(0.3, 10_000), a, y, keep_iterates=False).final
        worst = max(worst, float(np.linalg.norm(got - brute_force_lasso(a, y, 0.3))))
    ok = report(1, worst <= 1e-6, f"worst l2 gap to brute force {worst:.2e}", time.perf_counter() - start, 10)
    assert ok


def test_criterion_2_gradients(small_dict):
    start = time.perf_counter()
    worst = 0.0
    for v in GRAD_VARIANTS:
        params = perturbed_params(v, small_dict, 3, seed=11)
        batch = tiny_batch(small_dict, seed=5)
        _, grads = loss_and_grad(params, v, small_dict, batch)
        for name in params.trainable():
            fd = central_difference(lambda: loss_and_grad(params, v, small_dict, batch)[0], params.tensors[name])
            worst = max(worst, float(np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), 1e-8)))
    ok = report(2, worst <= 1e-4, f"worst relative gradient error {worst:.2e}", time.perf_counter() - start, 30)
    assert ok


def _theory(names):
    start = time.perf_counter()
    inst, results = run_suites(count=200)
    picked = [r for r in results if r.name.split("[")[0] in names or r.name.startswith("hypothesis")]
    failed = [r.name for r in picked if not r.passed]
    detail = f"mu*s = {inst.mu * inst.s:.3f}, {len(picked) - len(failed)}/{len(picked)} properties hold"
    return not failed, detail + (f", failed {failed}" if failed else ""), time.perf_counter() - start


def test_criterion_3_no_false_positive():
    ok, detail, elapsed = _theory({"no_false_positive", "monotone_decay"})
    assert report(3, ok, detail, elapsed, 60)


def test_criterion_4_two_phase():
    ok, detail, elapsed = _theory({"two_phase"})
    assert report(4, ok, detail, elapsed, 60)


@pytest.mark.slow
def test_criterion_5_desk_reproduction(desk):
    cfg, _, table, _, elapsed = desk
    tag = cfg.law.tag
    final = {name: table.final(name, tag) for name in ("lista_cp", "lista_ss", "ebt_lista_ss", "ebt_lista_ss_l2")}
    ok = (
        final["ebt_lista_ss"] < final["lista_ss"]
        and final["ebt_lista_ss"] < final["lista_cp"]
        and final["ebt_lista_ss_l2"] < final["lista_cp"]
    )
    detail = ", ".join(f"{k} {v:.2f} dB" for k, v in final.items())
    assert report(5, ok, detail, elapsed, 1800)


@pytest.mark.slow
def test_criterion_6_disentanglement(desk):
    start = time.perf_counter()
    _, trained, _, _, _ = desk
    v_ebt, p_ebt, _ = trained["ebt_lista"]
    v_plain, p_plain, _ = trained["lista_cp"]
    s_rho, s_b = ex.log_param_std(p_ebt, v_ebt), ex.log_param_std(p_plain, v_plain)
    ok = report(6, s_rho < s_b, f"std log rho {s_rho:.3f} vs std log b {s_b:.3f}", time.perf_counter() - start, 1800)
    assert ok


@pytest.mark.slow
def test_criterion_7_adaptivity():
    start = time.perf_counter()
    cfg = replace(
        desk_config(),
        law=SparsityLaw.fixed(0.8),
        variants=[Variant(Kind.LISTA_CP), Variant(Kind.EBT_LISTA)],
        eval_laws=[SparsityLaw.fixed(0.9), SparsityLaw.fixed(0.99)],
    )
    table = ex.run_adaptivity(cfg)
    parts, ok = [], True
    for law in cfg.eval_laws:
        tag = ex.adaptivity_tag(cfg.law, law)
        ebt, plain = table.final("ebt_lista", tag), table.final("lista_cp", tag)
        ok &= ebt <= plain
        parts.append(f"p_b={law.p_b:g}: ebt_lista {ebt:.2f} vs lista_cp {plain:.2f} dB")
    assert report(7, ok, "; ".join(parts), time.perf_counter() - start, 2700)


def classical_gap(out_dir=None):
    d = gen_dictionary(50, 100, seed=0)
    batch = make_batch(d, 1000, SparsityLaw.fixed(0.95), seed=1)
    cfg = ClassicalConfig(0.1, 200)
    ista = ista_run(cfg, d, batch.ys, x_true=batch.xs, keep_iterates=False)
    ebt = ebt_classical_run(replace(cfg, variant=ClassicalVariant.EBT_ISTA), d, batch.ys, x_true=batch.xs, keep_iterates=False)
    if out_dir is not None:
        ista.write_csv(out_dir / "ista.csv")
        ebt.write_csv(out_dir / "ebt_ista.csv")
    return [float(np.nanmean(e) - np.nanmean(i)) for e, i in zip(ebt.nmse, ista.nmse)]


@pytest.mark.xfail(strict=True, reason="EBT-ISTA still leads at iteration 200 here; see the decisions ledger")
def test_criterion_8_classical_crossover():
    start = time.perf_counter()
    gap = classical_gap()
    ok = gap[20] < 0 and gap[200] > 0
    detail = f"EBT-ISTA minus ISTA NMSE: {gap[20]:+.2f} dB at 20, {gap[200]:+.2f} dB at 200"
    assert report(8, ok, detail, time.perf_counter() - start, 60)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the l_1 baseline beats LISTA-SS on the noiseless sphere; see the decisions ledger")
def test_criterion_9_photometric(tmp_path):
    start = time.perf_counter()
    res = ex.run_stereo(ExperimentConfig(), out_dir=tmp_path)
    err = {m: res.error(m, 0.9) for m in ("ebt_lista_ss", "lista_ss", "l_1", "l_s")}
    ok = err["ebt_lista_ss"] < err["lista_ss"] < err["l_1"] < err["l_s"]
    detail = "p_e=0.9: " + ", ".join(f"{k} {v:.4g} deg" for k, v in err.items())
    assert report(9, ok, detail, time.perf_counter() - start, 1200)


@pytest.mark.slow
def test_criterion_10_reproducible(desk, tmp_path):
    start = time.perf_counter()
    _, _, _, first, _ = desk
    run_desk(tmp_path / "desk")
    for d in (tmp_path / "c1", tmp_path / "c2"):
        d.mkdir()
        classical_gap(d)
    pairs = [(first / p.name, tmp_path / "desk" / p.name) for p in sorted(first.glob("*.csv"))]
    pairs += [(tmp_path / "c1" / n, tmp_path / "c2" / n) for n in ("ista.csv", "ebt_ista.csv")]
    differ = [b.name for a, b in pairs if a.read_bytes() != b.read_bytes()]
    detail = f"{len(pairs) - len(differ)}/{len(pairs)} CSV files byte-identical on rerun"
    ok = report(10, not differ and len(pairs) >= 9, detail + (f", differ {differ}" if differ else ""), time.perf_counter() - start, 1800)
    assert ok

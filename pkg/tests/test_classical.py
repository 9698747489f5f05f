import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_lasso
from oracles import lasso_objective as oracle_objective
from unfold_sc.classical import (
    ClassicalConfig,
    ClassicalVariant,
    ebt_classical_run,
    fista_run,
    ista_run,
    ista_step,
    lasso_objective,
)
from unfold_sc.core import spectral_step
from unfold_sc.datagen import SparsityLaw, gen_dictionary, make_batch


def instance(seed, m=5, n=10):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    return a, rng.standard_normal(m)


class TestIstaStep:
    def test_zero_problem(self, small_dict):
        np.testing.assert_array_equal(ista_step(small_dict, 2.0, 0.1, np.zeros(10), np.zeros(5)), np.zeros(10))

    def test_large_lambda_stays_zero(self):
        a, y = instance(0)
        lam = 1.01 * np.max(np.abs(a.T @ y))
        assert not ista_step(a, spectral_step(a), lam, np.zeros(10), y).any()

    def test_small_lambda_recovers_one_sparse(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 10))
        xs = np.zeros(10)
        xs[3] = 1.7
        y = a @ xs
        lam = 0.01
        # support oracle: stationarity restricted to the true support
        want = np.zeros(10)
        col = a[:, 3]
        want[3] = (col @ y - lam) / (col @ col)
        gamma = spectral_step(a)
        x = np.zeros(10)
        for _ in range(10_000):
            x = ista_step(a, gamma, lam, x, y)
        np.testing.assert_allclose(x, want, atol=1e-3)
        np.testing.assert_allclose(x, xs, atol=1e-2)

    def test_batch_matches_rows(self, rng):
        a = rng.standard_normal((4, 8))
        xb, yb = rng.standard_normal((3, 8)), rng.standard_normal((3, 4))
        out = ista_step(a, 30.0, 0.2, xb, yb)
        for i in range(3):
            np.testing.assert_allclose(out[i], ista_step(a, 30.0, 0.2, xb[i], yb[i]), rtol=0, atol=1e-14)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31), st.floats(0.01, 2.0))
    def test_objective_non_increasing(self, seed, lam):
        a, y = instance(seed)
        gamma = spectral_step(a)
        x = np.random.default_rng(seed + 1).standard_normal(10)
        for _ in range(20):
            nxt = ista_step(a, gamma, lam, x, y)
            assert lasso_objective(a, nxt, y, lam) <= lasso_objective(a, x, y, lam) + 1e-12
            x = nxt


class TestRun:
    def test_objective_matches_oracle(self):
        a, y = instance(2)
        x = np.random.default_rng(0).standard_normal(10)
        assert lasso_objective(a, x, y, 0.3) == pytest.approx(oracle_objective(a, x, y, 0.3), rel=1e-14)

    def test_zero_iterations(self):
        a, y = instance(3)
        tr = fista_run(ClassicalConfig(0.1, 0), a, y)
        assert len(tr) == 1
        np.testing.assert_array_equal(tr.final, np.zeros(10))

    def test_fista_not_worse_than_ista(self):
        a, y = instance(4)
        cfg = ClassicalConfig(0.1, 300)
        assert fista_run(cfg, a, y).objective[-1] <= ista_run(cfg, a, y).objective[-1] + 1e-12

    def test_momentum_recurrence(self):
        a, y = instance(5)
        tr = fista_run(ClassicalConfig(0.1, 10), a, y)
        t = 1.0
        for got in tr.momentum:
            t = (1 + math.sqrt(1 + 4 * t * t)) / 2
            assert got == pytest.approx(t, abs=1e-12)

    def test_trace_lengths(self):
        a, y = instance(6)
        tr = ista_run(ClassicalConfig(0.1, 7), a, y, x_true=np.ones(10))
        assert len(tr.estimates) == 8
        assert len(tr.thresholds) == 7
        assert len(tr.nmse) == 8

    def test_iterates_dropped(self):
        a, y = instance(6)
        tr = ista_run(ClassicalConfig(0.1, 7), a, y, keep_iterates=False)
        assert len(tr.estimates) == 2 and len(tr) == 8
        np.testing.assert_array_equal(tr.final, ista_run(ClassicalConfig(0.1, 7), a, y).final)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ClassicalConfig(0.0)
        with pytest.raises(ValueError):
            ClassicalConfig(0.1, norm_p=3)

    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force_equivalence(self, seed):
        a, y = instance(seed + 10, 4, 8)
        lam = 0.3
        want = brute_force_lasso(a, y, lam)
        got = ista_run(ClassicalConfig(lam, 20_000), a, y, keep_iterates=False).final
        np.testing.assert_allclose(got, want, atol=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_fixed_point_is_optimal(self, seed):
        a, y = instance(seed + 20)
        lam = 0.2
        x = ista_run(ClassicalConfig(lam, 20_000), a, y, keep_iterates=False).final
        assert np.allclose(ista_step(a, spectral_step(a), lam, x, y), x, atol=1e-12)
        grad = a.T @ (a @ x - y)
        on = x != 0
        np.testing.assert_allclose(grad[on], -lam * np.sign(x[on]), atol=1e-8)
        assert np.all(np.abs(grad[~on]) <= lam + 1e-8)

    def test_csv(self, tmp_path):
        a, y = instance(7)
        tr = ista_run(ClassicalConfig(0.1, 3), a, y, x_true=np.ones(10))
        tr.write_csv(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["iter", "nmse_db", "threshold", "support_size", "objective"]
        assert len(rows) == 5
        assert rows[1][2] == ""
        assert float(rows[2][4]) == tr.objective[1][0]


class TestEbtClassical:
    def test_exact_solution_zero_threshold(self, rng):
        a = rng.standard_normal((5, 10))
        x = rng.standard_normal(10)
        cfg = ClassicalConfig(0.1, 1, ClassicalVariant.EBT_ISTA)
        # a one-step run from 0 with y = 0 sits at the exact solution x = 0
        tr = ebt_classical_run(cfg, a, np.zeros(5))
        assert tr.thresholds[0][0] == 0.0
        tr = ebt_classical_run(cfg, a, a @ x)
        assert tr.thresholds[0][0] > 0

    def test_requires_ebt_variant(self):
        a, y = instance(0)
        with pytest.raises(ValueError):
            ebt_classical_run(ClassicalConfig(0.1, 1), a, y)

    @pytest.mark.parametrize("p", [1, 2])
    def test_threshold_tracks_residual(self, p):
        a, y = instance(8)
        gamma = spectral_step(a)
        tr = ebt_classical_run(ClassicalConfig(0.3, 5, ClassicalVariant.EBT_FISTA, p), a, y)
        # FISTA thresholds follow the extrapolated point, step 0 is at x = 0
        assert tr.thresholds[0][0] == pytest.approx(0.3 * np.linalg.norm(y, ord=p) / gamma, rel=1e-14)

    def test_early_lead_then_crossover(self):
        d = gen_dictionary(50, 100, seed=0)
        batch = make_batch(d, 200, SparsityLaw.fixed(0.95), seed=1)
        cfg = ClassicalConfig(0.1, 1000)
        ista = ista_run(cfg, d, batch.ys, x_true=batch.xs)
        ebt = ebt_classical_run(replace(cfg, variant=ClassicalVariant.EBT_ISTA), d, batch.ys, x_true=batch.xs)
        gap = [np.nanmean(e) - np.nanmean(i) for e, i in zip(ebt.nmse, ista.nmse)]
        assert gap[20] < 0
        assert gap[-1] > 0

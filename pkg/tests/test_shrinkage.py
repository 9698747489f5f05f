import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unfold_sc import _kernels
from unfold_sc.shrinkage import (
    ThresholdSpec,
    ebt_threshold,
    selection_count,
    shrink_rows,
    soft_threshold,
    support_select_threshold,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)
thresholds = st.floats(0, 50, allow_nan=False)


class TestSoftThreshold:
    def test_definition_values(self):
        np.testing.assert_allclose(soft_threshold(np.array([1.2, -0.3]), 0.5), [0.7, 0.0])

    def test_zero_threshold_is_identity(self, rng):
        v = rng.standard_normal(20)
        np.testing.assert_array_equal(soft_threshold(v, 0.0), v)

    def test_threshold_at_max_kills_everything(self, rng):
        v = rng.standard_normal(20)
        np.testing.assert_array_equal(soft_threshold(v, np.max(np.abs(v))), np.zeros(20))

    def test_boundary_maps_to_zero(self):
        np.testing.assert_array_equal(soft_threshold(np.array([1.0, -1.0]), 1.0), [0.0, 0.0])

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_threshold(np.ones(3), -0.1)

    def test_per_row_thresholds(self):
        z = np.array([[1.0, -2.0], [1.0, -2.0]])
        out = soft_threshold(z, np.array([0.5, 1.5]))
        np.testing.assert_allclose(out, [[0.5, -1.5], [0.0, -0.5]])

    @given(vectors, vectors, thresholds)
    def test_nonexpansive(self, u, v, b):
        n = min(u.size, v.size)
        u, v = u[:n], v[:n]
        lhs = np.linalg.norm(soft_threshold(u, b) - soft_threshold(v, b))
        assert lhs <= np.linalg.norm(u - v) * (1 + 1e-12) + 1e-12

    @given(vectors, thresholds, thresholds)
    def test_monotone_kill(self, v, b1, b2):
        lo, hi = sorted((b1, b2))
        assert np.all(np.abs(soft_threshold(v, hi)) <= np.abs(soft_threshold(v, lo)))


class TestSupportSelect:
    def test_hand_example(self):
        out, sel = support_select_threshold(np.array([3.0, -5.0, 1.0, 0.5]), 1.0, 25.0)
        np.testing.assert_array_equal(out, [2.0, -5.0, 0.0, 0.0])
        assert sel == {1}

    def test_full_selection_above_threshold_passes_everything(self, rng):
        v = rng.uniform(1.0, 2.0, 10) * rng.choice([-1, 1], 10)
        out, sel = support_select_threshold(v, 0.5, 100.0)
        np.testing.assert_array_equal(out, v)
        assert sel == set(range(10))

    def test_ties_go_to_lower_index(self):
        out, sel = support_select_threshold(np.array([2.0, -2.0, 2.0]), 1.0, 34.0)
        assert sel == {0, 1}
        np.testing.assert_array_equal(out, [2.0, -2.0, 1.0])

    def test_selected_below_threshold_is_zero(self):
        out, sel = support_select_threshold(np.array([0.5, 0.1]), 1.0, 50.0)
        assert sel == {0}
        np.testing.assert_array_equal(out, [0.0, 0.0])

    @given(vectors, thresholds)
    def test_p_zero_equals_soft_threshold(self, v, b):
        out, sel = support_select_threshold(v, b, 0.0)
        np.testing.assert_array_equal(out, soft_threshold(v, b))
        assert sel == frozenset()

    @given(vectors, thresholds, st.floats(0, 100))
    def test_case_split(self, v, b, p):
        out, sel = support_select_threshold(v, b, p)
        assert len(sel) == selection_count(p, v.size)
        for i, vi in enumerate(v):
            if abs(vi) <= b:
                assert out[i] == 0.0
            elif i in sel:
                assert out[i] == vi
            else:
                assert out[i] == np.sign(vi) * (abs(vi) - b)


class TestSelectionCount:
    @pytest.mark.parametrize(
        "p, n, k",
        [(0, 100, 0), (0.6, 100, 1), (6.5, 100, 7), (25, 4, 1), (0.6, 3, 1), (100, 7, 7), (16.25, 15, 3)],
    )
    def test_ceiling(self, p, n, k):
        assert selection_count(p, n) == k

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            selection_count(101, 10)


class TestEbtThreshold:
    def test_exact_solution_gives_alpha(self, rng):
        a = rng.standard_normal((2, 3))
        x = rng.standard_normal(3)
        assert ebt_threshold(rng.standard_normal((3, 2)), a, x, a @ x, 0.3, 1, 0.25) == pytest.approx(0.25, abs=1e-15)

    def test_zero_parameters(self, rng):
        a = rng.standard_normal((2, 3))
        assert ebt_threshold(a.T, a, rng.standard_normal(3), rng.standard_normal(2), 0.0, 2, 0.0) == 0.0

    @pytest.mark.parametrize("p", [1, 2])
    def test_direct_evaluation(self, rng, p):
        a = rng.standard_normal((2, 3))
        u = rng.standard_normal((3, 2))
        x, y = rng.standard_normal(3), rng.standard_normal(2)
        want = 0.7 * np.linalg.norm(u @ (a @ x - y), ord=p) + 0.1
        assert ebt_threshold(u, a, x, y, 0.7, p, 0.1) == pytest.approx(want, rel=1e-15)

    @given(st.floats(0, 10), st.integers(0, 2**31))
    def test_homogeneous_in_residual(self, c, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((3, 5))
        u = rng.standard_normal((5, 3))
        x = rng.standard_normal(5)
        r = rng.standard_normal(3)
        base = ebt_threshold(u, a, x, a @ x - r, 0.4, 1, 0.2) - 0.2
        scaled = ebt_threshold(u, a, x, a @ x - c * r, 0.4, 1, 0.2) - 0.2
        assert scaled == pytest.approx(c * base, rel=1e-9, abs=1e-9)

    def test_negative_rho_rejected(self, rng):
        a = rng.standard_normal((2, 3))
        with pytest.raises(ValueError):
            ebt_threshold(a.T, a, np.zeros(3), np.zeros(2), -1.0)


class TestThresholdSpec:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ThresholdSpec("fixed", b=-1.0)

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            ThresholdSpec("ebt", rho=0.1, support_fraction=120)


class TestKernelParity:
    """The numba and numpy kernels must agree bit for bit."""

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 12)), elements=finite), st.integers(0, 12))
    def test_support_select(self, z, k):
        k = min(k, z.shape[1])
        b = np.abs(z[:, 0]) * 0.5
        for a_np, a_nb in zip(_kernels.support_select_rows_np(z, b, k), _kernels.support_select_rows_nb(z, b, k)):
            np.testing.assert_array_equal(a_np, a_nb)

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 12)), elements=finite))
    def test_soft_threshold(self, z):
        b = np.abs(z[:, -1]) * 0.3
        for a_np, a_nb in zip(_kernels.soft_threshold_rows_np(z, b), _kernels.soft_threshold_rows_nb(z, b)):
            np.testing.assert_array_equal(a_np, a_nb)

    def test_env_flag_selects_numpy(self, monkeypatch):
        monkeypatch.setenv("UNFOLD_SC_NUMBA", "0")
        assert not _kernels.numba_enabled()
        monkeypatch.setenv("UNFOLD_SC_NUMBA", "1")
        assert _kernels.numba_enabled() == _kernels.HAS_NUMBA

    def test_shrink_rows_without_selection(self, rng):
        z = rng.standard_normal((4, 6))
        out, active, selected = shrink_rows(z, np.full(4, 0.3), 0)
        np.testing.assert_array_equal(out, soft_threshold(z, 0.3))
        assert not selected.any()
        np.testing.assert_array_equal(active, np.abs(z) > 0.3)

"""Tests for the probabilistic max-plus solver."""
import numpy as np
import pytest

from src.hjb_maxplus.exceptions import (
    ConfigurationError,
    MaxPlusStateError,
    RegressionError,
    SamplingError,
    TimeIndexError,
)
from src.hjb_maxplus.models.schemas import GridSpec, SamplePlan, SchemeConfig
from src.hjb_maxplus.services.decomp import build_decomposition
from src.hjb_maxplus.services.expect import EulerStepper, QuadratureEngine
from src.hjb_maxplus.services.maxplus import (
    FormStack,
    G_operator,
    MaxPlusValue,
    bootstrap_sup_error,
    distribute_check,
    linear_operator,
    node_operator,
    quadratic_basis,
    regress_quadratic,
    representation_warnings,
    select_forms,
    solve_maxplus,
)
from src.hjb_maxplus.services.gridsolve import solve_grid, sup_error_against
from src.hjb_maxplus.services.problem import load_problem
from src.hjb_maxplus.services.schemes import apply_T


def lq1d_value(t, x):
    return -np.sum(np.asarray(x) ** 2, axis=-1) - (1.0 - t)


@pytest.fixture
def plan():
    return SamplePlan(n_in=20, n_x=10, n_w=5, seed=3)


@pytest.fixture
def lq1d_forms(lq1d, lq1d_decomp, plan):
    return solve_maxplus(lq1d, lq1d_decomp, SchemeConfig(h=0.25), plan, QuadratureEngine(3))


class TestFormStack:
    def test_empty(self):
        with pytest.raises(MaxPlusStateError):
            FormStack([])

    def test_select_forms_ties_to_first(self):
        forms = load_problem("switching").terminal_forms
        chosen = select_forms(forms, np.array([[0.0], [1.0], [0.625]]))
        np.testing.assert_array_equal(chosen, [0, 1, 0])
        np.testing.assert_allclose(FormStack(forms).max([[1.0]]), [-0.25])


class TestDistributivity:
    """G(max_z φ) against the best selection z̄ of forms per sample."""

    def test_nonnegative_weights(self):
        report = distribute_check(linear_operator([0.5, 0.5]), [[1.0, 0.0], [0.0, 2.0]])
        assert report.value_of_max == pytest.approx(1.5)
        assert report.selection == [0, 1]
        assert report.method == "brute_force"
        assert report.selections_tried == 4
        assert report.holds()

    def test_negative_weight_breaks_it(self):
        report = distribute_check(linear_operator([1.0, -1.0]), [[0.0, 1.0], [0.0, 1.0]])
        assert report.value_of_max == pytest.approx(0.0)
        assert report.best_selection_value == pytest.approx(1.0)
        assert report.gap == pytest.approx(1.0)
        assert not report.holds()

    def test_greedy_above_limit(self):
        report = distribute_check(
            linear_operator([0.5, 0.5]), [[1.0, 0.0], [0.0, 2.0]], brute_force_limit=1
        )
        assert report.method == "greedy"
        assert report.selections_tried == 1
        assert report.holds()

    def test_scheme_operator(self, lq1d_decomp):
        engine = QuadratureEngine(2)
        G = node_operator(SchemeConfig(h=0.05), lq1d_decomp, engine, 0, [0.4])
        Z, _ = engine.rule(1)
        values = np.random.default_rng(5).normal(size=(Z.shape[0], 2))
        report = distribute_check(G, values)
        assert report.method == "brute_force"
        assert report.holds()


class TestGOperator:
    def test_matches_scheme_on_successors(self, lq1d_decomp):
        engine = QuadratureEngine(4)
        stepper = EulerStepper.from_decomposition(lq1d_decomp)

        def q_tilde(W):
            return lq1d_value(0.05, stepper.step(0, [0.3], 0.05, W))

        value = G_operator(lq1d_decomp, engine, "lq", 0.0, 0.05, [0.3], None, q_tilde)
        expected = apply_T(SchemeConfig(h=0.05), lq1d_decomp, engine, 0.0, lq1d_value, [0.3])
        assert value == pytest.approx(expected, rel=1e-12)


class TestRegression:
    def test_basis_columns(self):
        assert quadratic_basis(np.zeros((4, 2))).shape == (4, 6)

    def test_recovers_concave_form(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 2))
        Q = np.array([[-2.0, 0.5], [0.5, -1.0]])
        y = 0.5 * np.einsum("ni,ij,nj->n", X, Q, X) + X @ np.array([1.0, -1.0]) + 0.3
        fit = regress_quadratic(X, y)
        np.testing.assert_allclose(fit.form.Q, Q, atol=1e-9)
        np.testing.assert_allclose(fit.form.b, [1.0, -1.0], atol=1e-9)
        assert fit.form.c == pytest.approx(0.3)
        assert fit.rms < 1e-9
        assert not fit.ridge

    def test_convex_curvature_is_clamped(self):
        X = np.linspace(-1.0, 1.0, 9)[:, None]
        fit = regress_quadratic(X, X[:, 0] ** 2, t=0.5, omega=2, mode="m")
        np.testing.assert_allclose(fit.form.Q, [[0.0]], atol=1e-12)
        assert fit.form.is_nsd()
        assert (fit.form.omega, fit.form.mode) == (2, "m")
        assert fit.rms > 0.0

    def test_rank_deficient_falls_back_to_ridge(self):
        fit = regress_quadratic(np.ones((5, 1)), np.zeros(5))
        assert fit.ridge
        assert float(fit.form([1.0])) == pytest.approx(0.0, abs=1e-9)

    def test_size_mismatch(self):
        with pytest.raises(RegressionError, match="3 states for 2 targets"):
            regress_quadratic(np.zeros((3, 1)), np.zeros(2))

    def test_non_finite(self):
        with pytest.raises(RegressionError, match="non-finite"):
            regress_quadratic(np.zeros((3, 1)), [0.0, np.nan, 1.0])


class TestSolveMaxPlus:
    """Backward recursion on lq1d: four steps of h = 0.25."""

    def test_one_form_per_sample(self, lq1d_forms):
        assert lq1d_forms.cardinalities() == [20, 20, 20, 20, 1]
        for layer in lq1d_forms.layers:
            assert all(form.is_nsd() for form in layer)

    def test_close_to_exact(self, lq1d_forms):
        points = np.linspace(-0.5, 0.5, 11)[:, None]
        error, stderr = bootstrap_sup_error(lq1d_forms, lq1d_value, points)
        assert error < 0.5
        assert stderr >= 0.0

    def test_realizable_targets_are_fitted_exactly(self, make_config):
        prob = load_problem(make_config(B=[0.0]))
        plan = SamplePlan(n_in=12, n_x=6, n_w=4, seed=2)
        cfg = SchemeConfig(h=0.25)
        mpv = solve_maxplus(prob, build_decomposition(prob), cfg, plan, QuadratureEngine(4))
        residuals = [form.residual for layer in mpv.layers[:-1] for form in layer]
        assert len(residuals) == 4 * 12
        assert max(residuals) <= 1e-8

    def test_enlarging_the_form_set_never_lowers(self, lq1d_forms):
        x = np.linspace(-2.0, 2.0, 21)[:, None]
        layer = lq1d_forms.layers[0]
        previous = FormStack(layer[:1]).max(x)
        for size in range(2, len(layer) + 1):
            current = FormStack(layer[:size]).max(x)
            assert np.all(current >= previous - 1e-12)
            previous = current
        np.testing.assert_allclose(previous, lq1d_forms.evaluate(0.0, x))

    @pytest.mark.slow
    def test_within_grid_error_and_bootstrap_band(self, lq1d, lq1d_decomp):
        cfg = SchemeConfig(h=0.1)
        plan = SamplePlan(n_in=500, n_x=25, n_w=25, seed=7)
        mpv = solve_maxplus(lq1d, lq1d_decomp, cfg, plan, QuadratureEngine(7))
        assert max(mpv.cardinalities()) <= 500
        assert all(form.is_nsd() for layer in mpv.layers for form in layer)

        spec = GridSpec(lo=-1.0, hi=1.0, points=41, nodes_per_dim=7)
        grid_error = sup_error_against(solve_grid(lq1d, lq1d_decomp, cfg, spec), lq1d_value)
        points = np.linspace(-1.0, 1.0, 41)[:, None]
        error, stderr = bootstrap_sup_error(mpv, lq1d_value, points)
        assert error <= grid_error + 3.0 * stderr

        again = solve_maxplus(lq1d, lq1d_decomp, cfg, plan, QuadratureEngine(7))
        for first, second in zip(mpv.layers[0], again.layers[0]):
            np.testing.assert_array_equal(first.Q, second.Q)
            np.testing.assert_array_equal(first.b, second.b)

    def test_metadata(self, lq1d_forms):
        meta = lq1d_forms.metadata
        assert meta["engine"] == "quad(3)"
        assert meta["seed"] == 3
        assert meta["warnings"] == []
        assert meta["terminal_deviation"] == pytest.approx(0.0)

    def test_reproducible(self, lq1d, lq1d_decomp, plan, lq1d_forms):
        again = solve_maxplus(lq1d, lq1d_decomp, SchemeConfig(h=0.25), plan, QuadratureEngine(3))
        x = np.linspace(-1.0, 1.0, 5)[:, None]
        np.testing.assert_array_equal(again.evaluate(0.0, x), lq1d_forms.evaluate(0.0, x))

    def test_sample_targets(self, lq1d, lq1d_decomp):
        plan = SamplePlan(n_in=12, n_x=6, n_w=4, seed=1, target_mode="sample")
        mpv = solve_maxplus(lq1d, lq1d_decomp, SchemeConfig(h=0.5), plan, QuadratureEngine(3))
        assert mpv.cardinalities() == [12, 12, 1]
        assert np.all(np.isfinite(mpv.evaluate(0.0, [[0.0], [1.0]])))

    def test_too_many_increments(self, lq1d, lq1d_decomp):
        plan = SamplePlan(n_in=3, n_x=2, n_w=5)
        with pytest.raises(SamplingError):
            solve_maxplus(lq1d, lq1d_decomp, SchemeConfig(h=0.5), plan)

    def test_initial_mean_dimension(self, lq1d, lq1d_decomp):
        plan = SamplePlan(n_in=4, n_x=2, n_w=2, x0_mean=[0.0, 0.0])
        with pytest.raises(SamplingError, match="x0_mean"):
            solve_maxplus(lq1d, lq1d_decomp, SchemeConfig(h=0.5), plan)

    def test_convex_reward_is_reported(self, make_config):
        prob = load_problem(make_config(Lxx=[2.0]))
        assert any("not concave" in reason for reason in representation_warnings(prob))


class TestMaxPlusValue:
    def test_save_and_load(self, lq1d_forms, tmp_path):
        path = lq1d_forms.save(tmp_path / "forms.json")
        loaded = MaxPlusValue.load(path)
        x = np.linspace(-1.0, 1.0, 7)[:, None]
        np.testing.assert_allclose(loaded.evaluate(0.25, x), lq1d_forms.evaluate(0.25, x))
        assert loaded.cardinalities() == lq1d_forms.cardinalities()
        assert loaded.metadata["n_in"] == 20

    def test_bootstrap_against_itself(self, lq1d_forms):
        error, stderr = bootstrap_sup_error(lq1d_forms, lq1d_forms.evaluate, [[0.0], [0.5]])
        assert (error, stderr) == (0.0, 0.0)

    def test_off_grid_time(self, lq1d_forms):
        with pytest.raises(TimeIndexError):
            lq1d_forms.evaluate(0.1, [0.0])

    def test_malformed_document(self):
        with pytest.raises(ConfigurationError, match="malformed"):
            MaxPlusValue.from_dict({"problem": "lq1d"})

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            MaxPlusValue.load(tmp_path / "missing.json")

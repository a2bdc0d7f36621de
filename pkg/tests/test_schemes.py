"""Tests for the one-step scheme operators."""
import math

import numpy as np
import pytest

from src.hjb_maxplus.exceptions import ConfigurationError, StepSizeError
from src.hjb_maxplus.models.schemas import SchemeConfig
from src.hjb_maxplus.services.consistency import TEST_FUNCTIONS, dyadic_h_list, fit_order
from src.hjb_maxplus.services.decomp import build_decomposition
from src.hjb_maxplus.services.expect import QuadratureEngine
from src.hjb_maxplus.services.problem import HamiltonianPoint, hamiltonian, load_problem
from src.hjb_maxplus.services.schemes import (
    apply_K,
    apply_T,
    apply_T_batch,
    apply_TD,
    apply_TN,
    argmax_T,
    guaranteed_monotone,
    h0,
    lam,
    mode_layer,
    node_weights,
    sample_ratios,
    stability_bound,
    validate_step,
)


def lq1d_value(t, x):
    return -np.sum(np.asarray(x) ** 2, axis=-1) - (1.0 - t)


@pytest.fixture
def growth_decomp():
    return build_decomposition(load_problem("growth"))


@pytest.fixture
def ftw_decomp():
    return build_decomposition(load_problem("ftw_critical"))


class TestStepValidation:
    def test_lambda_and_threshold(self, lq1d_decomp, growth_decomp):
        assert lam(lq1d_decomp) == 0.0
        assert lam(growth_decomp) == 1.0
        assert h0(SchemeConfig(h=0.1), lq1d_decomp) == math.inf
        assert h0(SchemeConfig(h=0.1), growth_decomp) == 0.5
        assert h0(SchemeConfig(h=0.1, h0=0.2), growth_decomp) == 0.2

    def test_step_too_large(self, growth_decomp):
        with pytest.raises(StepSizeError, match="h0"):
            validate_step(SchemeConfig(h=0.6), growth_decomp)

    def test_nonnegative_mode_rejects_negative_discount(self, growth_decomp):
        with pytest.raises(ConfigurationError, match="nonnegative"):
            validate_step(SchemeConfig(h=0.1, delta_mode="nonnegative"), growth_decomp)

    def test_guaranteed_monotone(self, ftw_decomp, lq1d_decomp):
        assert guaranteed_monotone(SchemeConfig(h=0.1), lq1d_decomp)
        assert not guaranteed_monotone(SchemeConfig(h=0.1, k=0), ftw_decomp)
        assert guaranteed_monotone(SchemeConfig(h=0.1, k=1), ftw_decomp)
        assert not guaranteed_monotone(SchemeConfig(h=0.1, variant="ftw_baseline"), lq1d_decomp)


class TestNodeWeights:
    """T^N as a linear functional of the payoff at the successor nodes."""

    def test_nonnegative_for_new_upwind(self, lq1d_decomp, quad_engine):
        weights = node_weights(SchemeConfig(h=0.05), lq1d_decomp, quad_engine, 0, [0.4])
        assert np.all(weights.coefficients >= 0.0)
        assert weights.coefficients.shape == (201, quad_engine.rule(1)[0].shape[0])

    def test_k_restores_nonnegativity(self, ftw_decomp, quad_engine):
        too_small = node_weights(SchemeConfig(h=0.05, k=0), ftw_decomp, quad_engine, 0, [0.0])
        large_enough = node_weights(SchemeConfig(h=0.05, k=1), ftw_decomp, quad_engine, 0, [0.0])
        assert np.min(too_small.coefficients) < 0.0
        assert np.min(large_enough.coefficients) >= 0.0

    def test_ftw_baseline_has_negative_weights(self, ftw_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05, variant="ftw_baseline")
        weights = node_weights(cfg, ftw_decomp, quad_engine, 0, [0.0])
        assert np.min(weights.coefficients) < 0.0
        np.testing.assert_array_equal(weights.denominator, 1.0)

    def test_numerator_matches_apply_TN(self, lq1d_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        u = lq1d_decomp.problem.controls[95]
        weights = node_weights(cfg, lq1d_decomp, quad_engine, 0, [0.4], controls=u)
        values = lq1d_value(0.05, weights.successors)
        expected = apply_TN(cfg, lq1d_decomp, quad_engine, 0, u, 0.0, [0.4], lq1d_value)
        assert weights.numerator(values)[0] == pytest.approx(expected, rel=1e-12)


class TestNormalization:
    def test_closed_form(self, lq1d_decomp):
        h = 0.04
        cfg = SchemeConfig(h=h)
        g = 1.0 / 0.99
        expected = 1.0 + h * g * math.sqrt(2.0 / (math.pi * h))
        assert apply_TD(cfg, lq1d_decomp, 0, [1.0], [0.2]) == pytest.approx(expected)

    def test_engine_agrees_with_closed_form(self, lq1d_decomp, quad_engine):
        cfg = SchemeConfig(h=0.04)
        exact = apply_TD(cfg, lq1d_decomp, 0, [-2.5], [0.2])
        assert apply_TD(cfg, lq1d_decomp, 0, [-2.5], [0.2], engine=quad_engine) == pytest.approx(
            exact, rel=1e-10
        )

    def test_discount_placement(self, growth_decomp):
        h = 0.1
        lower = apply_TD(SchemeConfig(h=h), growth_decomp, 0, [0.0], [0.0])
        general_cfg = SchemeConfig(h=h, delta_mode="general_sign")
        general = apply_TD(general_cfg, growth_decomp, 0, [0.0], [0.0])
        assert lower == pytest.approx(1.0 - h)
        assert general == pytest.approx(1.0)

    def test_other_variants(self, lq1d_decomp):
        cfg = SchemeConfig(h=0.1, variant="prior_fodjo2")
        assert apply_TD(cfg, lq1d_decomp, 0, [3.0], [0.0]) == 1.0


class TestOperators:
    def test_variants_agree_without_drift_residual(self, lq1d_decomp, quad_engine):
        new = SchemeConfig(h=0.05, variant="new_upwind", delta_mode="lower_bounded")
        prior = SchemeConfig(h=0.05, variant="prior_fodjo2", delta_mode="lower_bounded")
        args = (quad_engine, 0, [0.0], 0.0, [0.7], lq1d_value)
        expected = apply_TN(prior, lq1d_decomp, *args)
        assert apply_TN(new, lq1d_decomp, *args) == pytest.approx(expected)
        assert apply_TD(new, lq1d_decomp, 0, [0.0], [0.7]) == apply_TD(
            prior, lq1d_decomp, 0, [0.0], [0.7]
        )

    def test_consistency_on_exact_solution(self, lq1d_decomp, quad_engine):
        residuals = []
        for h in (0.04, 0.01, 0.0025):
            cfg = SchemeConfig(h=h)
            r = float(lq1d_value(0.0, [0.5]))
            residual = apply_K(cfg, lq1d_decomp, quad_engine, 0.0, [0.5], r, lq1d_value)
            assert abs(residual) <= math.sqrt(h)
            residuals.append(abs(residual))
        assert residuals[-1] < residuals[0]

    def test_one_step_close_to_exact(self, lq1d_decomp, quad_engine):
        h = 0.01
        value = apply_T(SchemeConfig(h=h), lq1d_decomp, quad_engine, 0.0, lq1d_value, [0.5])
        assert value == pytest.approx(float(lq1d_value(0.0, [0.5])), abs=h)

    def test_argmax_feedback(self, lq1d, lq1d_decomp, quad_engine):
        mode, j = argmax_T(SchemeConfig(h=0.01), lq1d_decomp, quad_engine, 0.0, lq1d_value, [0.5])
        assert mode == 0
        assert lq1d.controls[j, 0] == pytest.approx(-0.5, abs=0.2)

    def test_batch_matches_pointwise(self, switching_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        X = np.array([[-1.0], [0.2], [1.5]])
        batch = apply_T_batch(cfg, switching_decomp, quad_engine, 0.0, lq1d_value, X)
        for i, x in enumerate(X):
            value, (mode, control) = apply_T(
                cfg, switching_decomp, quad_engine, 0.0, lq1d_value, x, return_argmax=True
            )
            assert batch.values[i] == pytest.approx(value)
            assert (batch.mode[i], batch.control[i]) == (mode, control)

    def test_mode_layer_is_max_over_modes(self, switching_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        X = np.array([[-0.5], [0.8]])
        per_mode = [
            mode_layer(cfg, switching_decomp, quad_engine, m, 0.0, lq1d_value, X)
            for m in ("calm", "volatile")
        ]
        batch = apply_T_batch(cfg, switching_decomp, quad_engine, 0.0, lq1d_value, X)
        np.testing.assert_allclose(np.maximum(*per_mode), batch.values)

    def test_constants_pass_through(self, lq1d_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        base = apply_T(cfg, lq1d_decomp, quad_engine, 0.0, lq1d_value, [0.3])
        shifted = apply_T(
            cfg, lq1d_decomp, quad_engine, 0.0, lambda t, y: lq1d_value(t, y) + 2.0, [0.3]
        )
        assert shifted == pytest.approx(base + 2.0, rel=1e-12)


class TestSampleRatios:
    def test_single_node_matches_node_weights(self, lq1d_decomp):
        cfg = SchemeConfig(h=0.05)
        engine = QuadratureEngine(3)
        x = np.array([0.4])
        weights = node_weights(cfg, lq1d_decomp, engine, 0, x)
        Z, _ = engine.rule(1)
        j = 2
        payoff = float(lq1d_value(0.05, weights.successors[j]))
        expected = np.max(
            (weights.coefficients[:, j] * payoff + weights.running) / weights.denominator
        )
        got = sample_ratios(cfg, lq1d_decomp, 0, x[None, :], Z[j][None, :], [payoff])
        assert got[0] == pytest.approx(expected, rel=1e-12)


class TestStabilityBound:
    def test_lq1d(self, lq1d, lq1d_decomp):
        # ψ reaches 4 and |ℓ| reaches 104 on the audit window [−2, 2]
        assert stability_bound(lq1d, lq1d_decomp, SchemeConfig(h=0.1), 0.0) == pytest.approx(108.0)
        assert stability_bound(lq1d, lq1d_decomp, SchemeConfig(h=0.1), 1.0) == pytest.approx(4.0)

    def test_growth_factor(self, growth_decomp):
        prob = growth_decomp.problem
        bound = stability_bound(prob, growth_decomp, SchemeConfig(h=0.1), 0.0)
        # ψ ≡ 1 and |ℓ| ≤ 0.5 on the control grid
        assert bound == pytest.approx(math.exp(2.0) * (1.0 + 0.5))


def random_payoffs(seed: int, count: int):
    """Smooth bounded-curvature payoffs a·sin(b·y + c) + q·y²."""
    rng = np.random.default_rng(seed)
    params = zip(
        rng.uniform(-1.0, 1.0, count),
        rng.uniform(-2.0, 2.0, count),
        rng.uniform(-math.pi, math.pi, count),
        rng.uniform(-1.0, 0.5, count),
    )
    for a, b, c, q in params:

        def phi(t, y, a=a, b=b, c=c, q=q):
            y = np.asarray(y)[..., 0]
            return a * np.sin(b * y + c) + q * y**2

        yield phi


class TestVariantEquivalences:
    """The three variants coincide where their weights coincide."""

    def test_new_equals_prior_without_drift_residual_or_discount(self, make_config, quad_engine):
        decomp = build_decomposition(load_problem(make_config(B=[0.0])))
        new = SchemeConfig(h=0.05, variant="new_upwind")
        prior = SchemeConfig(h=0.05, variant="prior_fodjo2")
        xs = np.random.default_rng(1).uniform(-2.0, 2.0, 1000)
        for x, phi in zip(xs, random_payoffs(2, 1000)):
            expected = apply_T(prior, decomp, quad_engine, 0.0, phi, [x])
            assert apply_T(new, decomp, quad_engine, 0.0, phi, [x]) == pytest.approx(
                expected, abs=1e-12
            )

    def test_prior_equals_baseline_at_k0(self, make_config, quad_engine):
        doc = make_config(sigma=[1.5], underlying={"sigma": [1.0]})
        decomp = build_decomposition(load_problem(doc))
        prior = SchemeConfig(h=0.05, variant="prior_fodjo2", k=0)
        baseline = SchemeConfig(h=0.05, variant="ftw_baseline", k=0)
        xs = np.random.default_rng(3).uniform(-2.0, 2.0, 1000)
        for x, phi in zip(xs, random_payoffs(4, 1000)):
            expected = apply_T(baseline, decomp, quad_engine, 0.0, phi, [x])
            assert apply_T(prior, decomp, quad_engine, 0.0, phi, [x]) == pytest.approx(
                expected, abs=1e-12
            )

    def test_baseline_weights_match_prior_nodewise_at_k0(self, make_config, quad_engine):
        doc = make_config(sigma=[1.5], underlying={"sigma": [1.0]})
        decomp = build_decomposition(load_problem(doc))
        for x in ([-1.0], [0.3], [2.0]):
            prior = node_weights(
                SchemeConfig(h=0.05, variant="prior_fodjo2", k=0), decomp, quad_engine, 0, x
            )
            baseline = node_weights(
                SchemeConfig(h=0.05, variant="ftw_baseline", k=0), decomp, quad_engine, 0, x
            )
            np.testing.assert_allclose(prior.coefficients, baseline.coefficients, atol=1e-13)


class TestResidualOperator:
    """𝒦 at a smooth function approaches −(∂_t v + ℋ)."""

    def test_order_on_smooth_function(self, lq1d, lq1d_decomp, quad_engine):
        fn = TEST_FUNCTIONS["sin_exp"]
        t, x = 0.0, np.array([0.3])
        pt = HamiltonianPoint(
            x=x, r=float(fn.value(t, x)), p=fn.grad(t, x), Gamma=fn.hess(t, x)
        )
        limit = -(float(fn.dt(t, x)) + hamiltonian(lq1d, pt))
        h_list = dyadic_h_list(0.4, 2, 8)
        errors = [
            abs(apply_K(SchemeConfig(h=h), lq1d_decomp, quad_engine, t, x, pt.r, fn.value) - limit)
            for h in h_list
        ]
        p_hat, _ = fit_order(h_list, errors)
        assert p_hat >= 0.4
        assert errors[-1] < errors[0]

    def test_vanishes_at_the_one_step_value(self, switching_decomp, quad_engine):
        fn = TEST_FUNCTIONS["sin_exp"]
        cfg = SchemeConfig(h=0.05)
        for x in ([-1.2], [0.1], [0.9]):
            r = apply_T(cfg, switching_decomp, quad_engine, 0.2, fn.value, x)
            residual = apply_K(cfg, switching_decomp, quad_engine, 0.2, x, r, fn.value)
            assert residual == pytest.approx(0.0, abs=1e-10)

    def test_sign_away_from_the_fixed_point(self, switching_decomp, quad_engine):
        fn = TEST_FUNCTIONS["sin_exp"]
        cfg = SchemeConfig(h=0.05)
        r = apply_T(cfg, switching_decomp, quad_engine, 0.0, fn.value, [0.4])
        assert apply_K(cfg, switching_decomp, quad_engine, 0.0, [0.4], r + 0.1, fn.value) > 0.0
        assert apply_K(cfg, switching_decomp, quad_engine, 0.0, [0.4], r - 0.1, fn.value) < 0.0

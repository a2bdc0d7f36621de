"""Tests for the analytic LQ oracle."""
import dataclasses
import math

import numpy as np
import pytest

from src.hjb_maxplus.exceptions import UnsupportedOracleError
from src.hjb_maxplus.services.problem import load_problem
from src.hjb_maxplus.services.riccati import riccati_solve


class TestRiccatiOracle:
    """v(t,x) = ½xᵀP(t)x + b(t)·x + c(t) for single-mode LQ problems."""

    def test_lq1d_closed_form(self, lq1d):
        solution = riccati_solve(lq1d, 0.1)
        for t in (0.0, 0.35, 0.9):
            for x in (-1.5, 0.0, 0.7):
                expected = -x * x - (1.0 - t)
                assert solution.value(t, [x]) == pytest.approx(expected, abs=1e-9)

    def test_lq1d_feedback(self, lq1d):
        solution = riccati_solve(lq1d, 0.25)
        np.testing.assert_allclose(solution.control(0.5, [0.8]), [-0.8], atol=1e-9)

    def test_grid_sampling(self, lq1d):
        solution = riccati_solve(lq1d, 0.25)
        np.testing.assert_allclose(solution.times, [0.0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(solution.P[:, 0, 0], -2.0, atol=1e-10)
        np.testing.assert_allclose(solution.c, [-1.0, -0.75, -0.5, -0.25, 0.0], atol=1e-10)

    def test_nonstationary_gain(self):
        prob = load_problem("lq1d_half")
        solution = riccati_solve(prob, 0.1)
        for t in (0.0, 0.5, 1.0):
            expected = -2.0 * math.tanh((1.0 - t) + math.atanh(0.5))
            P, _, _ = solution.coefficients(t)
            assert P[0, 0] == pytest.approx(expected, abs=1e-8)

    def test_residual_vanishes(self, lq1d):
        solution = riccati_solve(lq1d, 0.1)
        assert abs(solution.residual(lq1d, 0, 0.3, [1.2])) < 1e-7

    def test_time_derivative_from_solution(self, lq1d):
        solution = riccati_solve(lq1d, 0.1)
        # v = −x² − (1 − t)
        assert solution.time_derivative(0.4, [0.7]) == pytest.approx(1.0, abs=1e-8)
        assert solution.time_derivative(0.0, [0.7]) == pytest.approx(1.0, abs=1e-8)

    def test_residual_detects_integration_error(self, lq1d):
        solution = riccati_solve(lq1d, 0.1)
        drift = np.array([0.0, 0.0, 0.01])

        def skewed(tau):
            return solution.dense(tau) + drift * tau

        tampered = dataclasses.replace(solution, dense=skewed)
        # c(t) gains 0.01·(1 − t), so ∂_t v is off by −0.01
        assert tampered.residual(lq1d, 0, 0.3, [1.2]) == pytest.approx(-0.01, abs=1e-6)

    def test_two_dimensional(self):
        prob = load_problem("lq2d")
        solution = riccati_solve(prob, 0.1)
        assert np.all(np.linalg.eigvalsh(solution.P[0]) <= 1e-9)
        assert solution.value(0.0, [0.0, 0.0]) < 0.0


class TestUnsupported:
    def test_multiple_modes(self):
        with pytest.raises(UnsupportedOracleError, match="modes"):
            riccati_solve(load_problem("switching"), 0.1)

    def test_multiple_terminal_forms(self):
        with pytest.raises(UnsupportedOracleError, match="terminal"):
            riccati_solve(load_problem("switching"), 0.1, m="calm")

    def test_convex_running_reward(self, make_config):
        prob = load_problem(make_config(Lxx=[2.0]))
        with pytest.raises(UnsupportedOracleError, match="not concave"):
            riccati_solve(prob, 0.1)

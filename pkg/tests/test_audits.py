"""Tests for the randomized scheme audits."""
import numpy as np
import pytest

from src.hjb_maxplus.config import get_settings
from src.hjb_maxplus.models.schemas import SchemeConfig
from src.hjb_maxplus.services.audits import (
    ClippedQuadratics,
    NodeBumps,
    check_monotone,
    check_subhomogeneous,
    weight_audit,
)
from src.hjb_maxplus.services.decomp import build_decomposition
from src.hjb_maxplus.services.expect import QuadratureEngine
from src.hjb_maxplus.services.problem import load_problem


@pytest.fixture
def ftw_decomp():
    return build_decomposition(load_problem("ftw_critical"))


class TestPayoffFamilies:
    def test_clipped_quadratics_are_bounded(self):
        rng = np.random.default_rng(0)
        family = ClippedQuadratics.draw(rng, 4, 1, scale=10.0)
        Y = rng.uniform(-20.0, 20.0, (4, 6, 1))
        values = family(Y, slice(0, 4))
        assert values.shape == (4, 6)
        assert np.all(np.abs(values) <= family.bound)

    def test_bumps_are_local(self):
        bumps = NodeBumps(centre=np.array([[0.0]]), radius=np.array([0.5]), amp=np.array([2.0]))
        values = bumps(np.array([[[0.0], [0.25], [1.0]]]), slice(0, 1))
        np.testing.assert_allclose(values, [[2.0, 1.5, 0.0]])


class TestMonotone:
    """T(φ) ≤ T(ψ) whenever φ ≤ ψ, for the weights proven nonnegative."""

    def test_lq1d_has_no_violations(self, lq1d_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        report = check_monotone(cfg, lq1d_decomp, trials=300, seed=1, engine=quad_engine)
        assert report.guaranteed
        assert report.violations == 0
        assert report.negative_weight_nodes == 0
        assert report.min_weight > 0.0
        assert report.examples == []

    def test_critical_problem_with_small_k(self, ftw_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05, k=0)
        report = check_monotone(cfg, ftw_decomp, trials=300, seed=1, engine=quad_engine)
        assert not report.guaranteed
        assert report.negative_weight_nodes > 0
        assert report.min_weight < 0.0
        assert report.k == 0

    def test_ftw_baseline_breaks_monotonicity(self, ftw_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05, variant="ftw_baseline", k=0)
        report = check_monotone(cfg, ftw_decomp, trials=300, seed=1, engine=quad_engine)
        assert not report.guaranteed
        assert report.violations > 0
        assert report.worst_margin < 0.0
        assert report.examples
        assert all(example.margin < 0.0 for example in report.examples)

    def test_critical_problem_with_min_k(self, ftw_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        report = check_monotone(cfg, ftw_decomp, trials=300, seed=1, engine=quad_engine)
        assert report.k == 1
        assert report.guaranteed
        assert report.violations == 0

    def test_degenerate_diffusion(self, degenerate_decomp):
        engine = QuadratureEngine(3)
        report = check_monotone(SchemeConfig(h=0.05), degenerate_decomp, trials=300, engine=engine)
        assert report.guaranteed
        assert report.violations == 0
        assert report.min_weight >= 0.0

    def test_reproducible(self, lq1d_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        first = check_monotone(cfg, lq1d_decomp, trials=100, seed=7, engine=quad_engine)
        second = check_monotone(cfg, lq1d_decomp, trials=100, seed=7, engine=quad_engine)
        assert first.worst_margin == second.worst_margin

    def test_environment_seed_wins(self, monkeypatch, lq1d_decomp, quad_engine):
        monkeypatch.setenv("HJB_SEED", "11")
        get_settings.cache_clear()
        cfg = SchemeConfig(h=0.05)
        first = check_monotone(cfg, lq1d_decomp, trials=50, seed=1, engine=quad_engine)
        second = check_monotone(cfg, lq1d_decomp, trials=50, seed=2, engine=quad_engine)
        assert first.worst_margin == second.worst_margin


@pytest.mark.slow
class TestMonotoneFullAudit:
    """Ten thousand randomized pairs per configuration."""

    def test_lq1d(self, lq1d_decomp):
        report = check_monotone(SchemeConfig(h=0.05), lq1d_decomp, trials=10_000, seed=3)
        assert report.trials == 10_000
        assert report.violations == 0

    def test_degenerate_diffusion(self, degenerate_decomp):
        cfg = SchemeConfig(h=0.05)
        engine = QuadratureEngine(4)
        report = check_monotone(cfg, degenerate_decomp, trials=10_000, seed=3, engine=engine)
        assert report.k == 1
        assert report.guaranteed
        assert report.violations == 0
        assert report.negative_weight_nodes == 0

    def test_ftw_baseline_on_critical_problem(self, ftw_decomp):
        cfg = SchemeConfig(h=0.05, variant="ftw_baseline", k=0)
        report = check_monotone(cfg, ftw_decomp, trials=10_000, seed=3)
        assert report.violations > 0


class TestWeightAudit:
    def test_counts(self, ftw_decomp, quad_engine):
        X = np.array([[0.0], [1.0]])
        negative, smallest = weight_audit(SchemeConfig(h=0.05, k=0), ftw_decomp, quad_engine, X)
        assert negative > 0
        assert smallest < 0.0
        negative, smallest = weight_audit(SchemeConfig(h=0.05, k=1), ftw_decomp, quad_engine, X)
        assert negative == 0


class TestSubhomogeneity:
    def test_constants_pass_through_without_growth(self, lq1d_decomp, quad_engine):
        cfg = SchemeConfig(h=0.05)
        report = check_subhomogeneous(cfg, lq1d_decomp, trials=200, seed=2, engine=quad_engine)
        assert report.alpha == 1.0
        assert report.violations == 0
        assert report.pass_through_exact is True

    def test_growth_factor(self):
        decomp = build_decomposition(load_problem("growth"))
        report = check_subhomogeneous(
            SchemeConfig(h=0.1), decomp, trials=200, seed=2, engine=QuadratureEngine(4)
        )
        assert report.lam == 1.0
        assert report.alpha == pytest.approx(1.2)
        assert report.violations == 0
        assert report.pass_through_exact is None

"""
Randomized audits of the scheme: monotonicity and additive subhomogeneity.

Trials are drawn in one batch from a seeded generator, so a report depends only on
(config, trials, seed). Payoffs come from a bounded family of clipped quadratics; the
ordered pairs add either a nonnegative clipped quadratic or a narrow bump centred on one
successor node, the latter probing individual node weights.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from ..config import resolve_seed
from ..models.schemas import (
    MonotoneAuditReport,
    SchemeConfig,
    SubhomogeneityReport,
    ViolationRecord,
)
from .decomp import Decomposition
from .expect import EulerStepper, ExpectationEngine, QuadratureEngine
from .schemes import apply_T_batch, guaranteed_monotone, lam, node_weights, resolve_k

logger = logging.getLogger("hjb_maxplus.audits")

MONOTONE_TOLERANCE = 1e-10
WEIGHT_TOLERANCE = 1e-12
PAYOFF_BOUND = 10.0
MAX_EXAMPLES = 5
BATCH = 1000


@dataclass
class ClippedQuadratics:
    """Per-trial payoffs y ↦ clip(a + b·y − c|y − o|², −B, B), vectorized over trials."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    o: np.ndarray
    bound: float = PAYOFF_BOUND

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int, d: int, scale: float = 1.0):
        return cls(
            a=scale * rng.uniform(-2.0, 2.0, n),
            b=scale * rng.uniform(-1.0, 1.0, (n, d)),
            c=scale * rng.uniform(-0.5, 1.0, n),
            o=rng.uniform(-2.0, 2.0, (n, d)),
        )

    def __call__(self, Y: np.ndarray, rows: slice) -> np.ndarray:
        # Y has shape (trials, nodes, d)
        a, b, c, o = self.a[rows], self.b[rows], self.c[rows], self.o[rows]
        diff = Y - o[:, None, :]
        linear = np.sum(Y * b[:, None, :], axis=-1)
        raw = a[:, None] + linear - c[:, None] * np.sum(diff**2, axis=-1)
        return np.clip(raw, -self.bound, self.bound)


@dataclass
class NodeBumps:
    """Nonnegative bumps amp·max(0, 1 − |y − centre|²/r²)."""

    centre: np.ndarray
    radius: np.ndarray
    amp: np.ndarray

    def __call__(self, Y: np.ndarray, rows: slice) -> np.ndarray:
        dist2 = np.sum((Y - self.centre[rows][:, None, :]) ** 2, axis=-1)
        r2 = self.radius[rows][:, None] ** 2
        return self.amp[rows][:, None] * np.maximum(0.0, 1.0 - dist2 / r2)


def _sample_states(decomp: Decomposition, rng: np.random.Generator, trials: int) -> np.ndarray:
    prob = decomp.problem
    return rng.uniform(prob.audit_lo, prob.audit_hi, (trials, prob.dim_x))


def _node_bumps(cfg, decomp, engine, rng, X) -> NodeBumps:
    trials, d = X.shape
    Z, _ = engine.rule(d)
    gap = float(np.min(pdist(Z))) if Z.shape[0] > 1 else 1.0
    stepper = EulerStepper.from_decomposition(decomp)
    modes = rng.integers(0, len(decomp.modes), trials)
    nodes = rng.integers(0, Z.shape[0], trials)
    centre = np.empty_like(X)
    radius = np.empty(trials)
    for i in range(len(decomp.modes)):
        rows = modes == i
        if not np.any(rows):
            continue
        sigma = decomp.modes[i].sigma_bar
        W = math.sqrt(cfg.h) * Z[nodes[rows]]
        centre[rows] = stepper.step(i, X[rows], cfg.h, W[:, None, :])[:, 0, :]
        smallest = float(np.linalg.svd(sigma, compute_uv=False)[-1])
        radius[rows] = 0.45 * math.sqrt(cfg.h) * smallest * gap
    return NodeBumps(centre=centre, radius=radius, amp=rng.uniform(0.1, 5.0, trials))


def _layer(cfg, decomp, engine, X, payoff) -> np.ndarray:
    values = np.empty(X.shape[0])
    for start in range(0, X.shape[0], BATCH):
        rows = slice(start, min(start + BATCH, X.shape[0]))

        def phi(t, Y, rows=rows):
            return payoff(Y, rows)

        values[rows] = apply_T_batch(cfg, decomp, engine, 0.0, phi, X[rows]).values
    return values


def weight_audit(cfg: SchemeConfig, decomp: Decomposition, engine: ExpectationEngine, X):
    """(number of negative node coefficients, smallest coefficient) over the states X."""
    negative = 0
    smallest = math.inf
    for x in X:
        for i in range(len(decomp.modes)):
            coefficients = node_weights(cfg, decomp, engine, i, x).coefficients
            negative += int(np.sum(coefficients < -WEIGHT_TOLERANCE))
            smallest = min(smallest, float(np.min(coefficients)))
    return negative, smallest


def check_monotone(
    cfg: SchemeConfig,
    decomp: Decomposition,
    trials: int = 10_000,
    seed: Optional[int] = 0,
    engine: Optional[ExpectationEngine] = None,
    weight_states: int = 50,
) -> MonotoneAuditReport:
    """Falsification test of T(φ) ≤ T(ψ) for random φ ≤ ψ, plus a node-weight audit."""
    engine = engine or QuadratureEngine()
    rng = np.random.default_rng(resolve_seed(seed))
    d = decomp.problem.dim_x
    X = _sample_states(decomp, rng, trials)
    base = ClippedQuadratics.draw(rng, trials, d)
    lift = ClippedQuadratics.draw(rng, trials, d, scale=0.5)
    bumps = _node_bumps(cfg, decomp, engine, rng, X)
    use_bump = rng.random(trials) < 0.5

    def upper(Y, rows):
        lifted = np.maximum(lift(Y, rows), 0.0)
        bumped = bumps(Y, rows)
        return base(Y, rows) + np.where(use_bump[rows][:, None], bumped, lifted)

    low = _layer(cfg, decomp, engine, X, base)
    high = _layer(cfg, decomp, engine, X, upper)
    margin = high - low
    bad = np.flatnonzero(margin < -MONOTONE_TOLERANCE)
    examples = [
        ViolationRecord(trial=int(i), x=[float(v) for v in X[i]], margin=float(margin[i]))
        for i in bad[np.argsort(margin[bad])][:MAX_EXAMPLES]
    ]
    negative, smallest = weight_audit(cfg, decomp, engine, X[: min(weight_states, trials)])
    report = MonotoneAuditReport(
        variant=cfg.variant,
        k=resolve_k(cfg, decomp),
        h=cfg.h,
        a_bar=decomp.a_bar,
        guaranteed=guaranteed_monotone(cfg, decomp),
        trials=trials,
        violations=int(bad.size),
        worst_margin=float(np.min(margin)),
        negative_weight_nodes=negative,
        min_weight=smallest,
        examples=examples,
    )
    logger.info(
        f"monotonicity audit {cfg.variant}: {report.violations} violations in {trials} trials, "
        f"worst margin {report.worst_margin:.3e}"
    )
    return report


def check_subhomogeneous(
    cfg: SchemeConfig,
    decomp: Decomposition,
    trials: int = 10_000,
    seed: Optional[int] = 0,
    engine: Optional[ExpectationEngine] = None,
) -> SubhomogeneityReport:
    """Check T(φ + s) ≤ T(φ) + (1 + 2λh)s for random φ and shifts s ≥ 0."""
    engine = engine or QuadratureEngine()
    rng = np.random.default_rng(resolve_seed(seed))
    d = decomp.problem.dim_x
    X = _sample_states(decomp, rng, trials)
    base = ClippedQuadratics.draw(rng, trials, d)
    shift = rng.uniform(0.0, 5.0, trials)

    def shifted(Y, rows):
        return base(Y, rows) + shift[rows][:, None]

    low = _layer(cfg, decomp, engine, X, base)
    high = _layer(cfg, decomp, engine, X, shifted)
    lam_ = lam(decomp)
    alpha = 1.0 + 2.0 * lam_ * cfg.h
    tolerance = MONOTONE_TOLERANCE * (1.0 + np.abs(low))
    excess = high - low - alpha * shift
    violations = int(np.sum(excess > tolerance))
    pass_through = None
    if lam_ == 0.0:
        pass_through = bool(np.all(high - low - shift <= tolerance))
    logger.info(
        f"subhomogeneity audit: α = {alpha:.6g}, {violations} violations in {trials} trials"
    )
    return SubhomogeneityReport(
        h=cfg.h,
        alpha=alpha,
        lam=lam_,
        trials=trials,
        violations=violations,
        worst_excess=float(np.max(excess)),
        pass_through_exact=pass_through,
    )

"""
Consistency harness for the derivative estimators.

Each smooth test function carries its analytic time derivative, gradient and Hessian,
so every target is exact. Errors are measured at a fixed (t, x) along a list of time
steps and the empirical order is the least-squares slope in log-log coordinates.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..exceptions import ConfigurationError, ReportError
from ..models.schemas import ConsistencyReport, ConsistencyRow
from .expect import (
    EulerStepper,
    ExpectationEngine,
    estimate_d0,
    estimate_d1_ftw,
    estimate_d1_upwind,
    estimate_d2_ftw,
    estimate_d2_poly,
    make_engine,
)

logger = logging.getLogger("hjb_maxplus.consistency")

ESTIMATORS = ("d0", "d1", "d2", "ftw1", "ftw2")
DEFAULT_H_BASE = 0.4


@dataclass(frozen=True)
class TestFunction:
    """A smooth v(t, x) on ℝ^d with analytic derivatives, all broadcasting over x[..., d]."""

    name: str
    value: Callable[[float, np.ndarray], np.ndarray]
    dt: Callable[[float, np.ndarray], np.ndarray]
    grad: Callable[[float, np.ndarray], np.ndarray]
    hess: Callable[[float, np.ndarray], np.ndarray]

    __test__ = False


def _diag(values: np.ndarray) -> np.ndarray:
    return values[..., :, None] * np.eye(values.shape[-1])


def _zeros_hess(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    return np.zeros(x.shape[:-1] + (d, d))


TEST_FUNCTIONS: Dict[str, TestFunction] = {
    "sin_exp": TestFunction(
        name="sin_exp",
        value=lambda t, x: math.exp(-t) * np.sum(np.sin(x), axis=-1),
        dt=lambda t, x: -math.exp(-t) * np.sum(np.sin(x), axis=-1),
        grad=lambda t, x: math.exp(-t) * np.cos(x),
        hess=lambda t, x: _diag(-math.exp(-t) * np.sin(x)),
    ),
    "linear": TestFunction(
        name="linear",
        value=lambda t, x: 1.0 + 2.0 * np.sum(x, axis=-1),
        dt=lambda t, x: np.zeros(np.shape(x)[:-1]),
        grad=lambda t, x: np.full(np.shape(x), 2.0),
        hess=lambda t, x: _zeros_hess(np.asarray(x)),
    ),
    "quadratic": TestFunction(
        name="quadratic",
        value=lambda t, x: np.sum(np.asarray(x) ** 2, axis=-1),
        dt=lambda t, x: np.zeros(np.shape(x)[:-1]),
        grad=lambda t, x: 2.0 * np.asarray(x),
        hess=lambda t, x: _diag(np.full(np.shape(x), 2.0)),
    ),
    "bump_cos": TestFunction(
        name="bump_cos",
        value=lambda t, x: math.cos(t) * np.exp(-0.5 * np.sum(np.asarray(x) ** 2, axis=-1)),
        dt=lambda t, x: -math.sin(t) * np.exp(-0.5 * np.sum(np.asarray(x) ** 2, axis=-1)),
        grad=lambda t, x: -math.cos(t)
        * np.asarray(x)
        * np.exp(-0.5 * np.sum(np.asarray(x) ** 2, axis=-1))[..., None],
        hess=lambda t, x: math.cos(t)
        * np.exp(-0.5 * np.sum(np.asarray(x) ** 2, axis=-1))[..., None, None]
        * (np.asarray(x)[..., :, None] * np.asarray(x)[..., None, :] - np.eye(np.shape(x)[-1])),
    ),
}


def get_test_function(name: str) -> TestFunction:
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown test function {name!r}; choose from {', '.join(sorted(TEST_FUNCTIONS))}"
        ) from None


@dataclass
class ConsistencySetup:
    """Where and with which coefficients the estimators are evaluated."""

    sigma_bar: np.ndarray = field(default_factory=lambda: np.eye(1))
    drift: np.ndarray = field(default_factory=lambda: np.zeros(1))
    g: np.ndarray = field(default_factory=lambda: np.ones(1))
    Sigma: np.ndarray = field(default_factory=lambda: np.ones((1, 1)))
    k: int = 0
    x: np.ndarray = field(default_factory=lambda: np.array([0.3]))
    t: float = 0.0

    def __post_init__(self):
        self.sigma_bar = np.atleast_2d(np.asarray(self.sigma_bar, dtype=float))
        self.drift = np.atleast_1d(np.asarray(self.drift, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        self.Sigma = np.asarray(self.Sigma, dtype=float).reshape(self.sigma_bar.shape[0], -1)
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))

    @property
    def stepper(self) -> EulerStepper:
        return EulerStepper.single(self.sigma_bar, drift=self.drift)


def dyadic_h_list(h_base: float = DEFAULT_H_BASE, first: int = 2, last: int = 6) -> list:
    """h_base·2⁻ⁱ for i = first..last."""
    return [h_base * 2.0**-i for i in range(first, last + 1)]


def fit_order(h_values: Sequence[float], errors: Sequence[float]):
    """Least-squares fit log(error) = log C + p·log h; returns (p, C)."""
    h = np.asarray(h_values, dtype=float)
    e = np.maximum(np.asarray(errors, dtype=float), 1e-300)
    if h.size < 3:
        raise ReportError("an order fit needs at least three time steps")
    slope, intercept = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope), float(math.exp(intercept))


def _estimate_and_target(estimator: str, fn: TestFunction, setup: ConsistencySetup, engine, h):
    stepper, x, t = setup.stepper, setup.x, setup.t
    sigma_bar = setup.sigma_bar

    def phi(s, y):
        return fn.value(s, y)

    if estimator == "d0":
        a = sigma_bar @ sigma_bar.T
        v = float(fn.value(t, x))
        estimate = (float(estimate_d0(engine, stepper, 0, x, t, h, phi)) - v) / h
        generator = setup.drift @ fn.grad(t, x) + 0.5 * np.trace(a @ fn.hess(t, x))
        target = float(fn.dt(t, x) + generator)
        return estimate, target, abs(estimate - target)
    if estimator == "d1":
        r = float(fn.value(t, x))
        estimate = float(estimate_d1_upwind(engine, stepper, 0, setup.g, x, t, h, phi, r))
        target = float((sigma_bar @ setup.g) @ fn.grad(t, x))
        return estimate, target, abs(estimate - target)
    if estimator == "d2":
        estimate = float(estimate_d2_poly(engine, stepper, 0, setup.Sigma, setup.k, x, t, h, phi))
        s = sigma_bar @ setup.Sigma
        target = float(0.5 * np.trace(s @ s.T @ fn.hess(t, x)))
        return estimate, target, abs(estimate - target)
    if estimator == "ftw1":
        vec = estimate_d1_ftw(engine, stepper, x, t, h, phi)
        target_vec = fn.grad(t, x)
        return float(vec[0]), float(target_vec[0]), float(np.linalg.norm(vec - target_vec))
    if estimator == "ftw2":
        mat = estimate_d2_ftw(engine, stepper, x, t, h, phi)
        target_mat = fn.hess(t, x)
        return float(mat[0, 0]), float(target_mat[0, 0]), float(np.linalg.norm(mat - target_mat))
    raise ConfigurationError(
        f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATORS)}"
    )


def consistency_study(
    estimator: str,
    test_function: str,
    h_list: Optional[Sequence[float]] = None,
    engine: Optional[ExpectationEngine] = None,
    setup: Optional[ConsistencySetup] = None,
) -> ConsistencyReport:
    """
    Measure estimator errors against analytic targets along `h_list`.

    Targets: ∂_t v + ℒv for d0, (σ̲g)·Dv for d1, ½tr(σ̲ΣΣᵀσ̲ᵀD²v) for d2, Dv and D²v
    for the FTW estimators; all at (t, x) of the setup.
    """
    h_values = list(h_list) if h_list is not None else dyadic_h_list()
    if len(h_values) < 3:
        raise ReportError("a consistency study needs at least three time steps")
    if any(h <= 0 for h in h_values):
        raise ConfigurationError("time steps must be positive")
    fn = get_test_function(test_function)
    engine = engine or make_engine("quad")
    setup = setup or ConsistencySetup()

    rows = []
    for h in h_values:
        estimate, target, error = _estimate_and_target(estimator, fn, setup, engine, h)
        rows.append(ConsistencyRow(h=h, error=error, target=target, estimate=estimate))
        logger.info(f"{estimator}/{test_function} h={h:.6g}: error {error:.3e}")
    p_hat, _ = fit_order([r.h for r in rows], [r.error for r in rows])
    return ConsistencyReport(
        estimator=estimator,
        test_function=test_function,
        engine=engine.describe(),
        rows=rows,
        p_hat=p_hat,
    )

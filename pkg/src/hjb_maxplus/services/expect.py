"""
Expectation engines and the derivative estimators built on them.

Engines return nodes in standard-normal units together with their weights; a
Brownian increment over a step h is W = √h·Z. The quadrature rule splits every axis at
0 and integrates each half with a Gauss rule for the half-normal density, so integrands
with a kink on the coordinate hyperplanes are still integrated exactly when they are
polynomial on each orthant.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh_tridiagonal

from ..config import get_settings, resolve_seed
from ..exceptions import ConfigurationError, EngineError
from .problem import Underlying
from .weights import ck_dk, expected_upwind1, ftw_eval, gaussian_moment, poly2_eval, upwind1_eval

logger = logging.getLogger("hjb_maxplus.expect")

Phi = Callable[[float, np.ndarray], np.ndarray]

# Support of the discretized half-normal measure; the tail beyond carries mass e^{-72}
_HALF_NORMAL_CUTOFF = 12.0
_DISCRETIZATION_POINTS = 600


@lru_cache(maxsize=None)
def half_normal_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    n-point Gauss rule for the half-normal density 2φ(s) on [0, ∞).

    Recurrence coefficients come from a discretized Stieltjes procedure; nodes and
    weights from the Jacobi matrix (Golub–Welsch).
    """
    if n < 1:
        raise ConfigurationError("quadrature needs at least one node per half axis")
    y, wy = leggauss(_DISCRETIZATION_POINTS)
    s = 0.5 * _HALF_NORMAL_CUTOFF * (y + 1.0)
    mass = 0.5 * _HALF_NORMAL_CUTOFF * wy * math.sqrt(2.0 / math.pi) * np.exp(-0.5 * s**2)

    alpha = np.empty(n)
    beta = np.empty(n)
    p_prev = np.zeros_like(s)
    p = np.ones_like(s)
    norm_prev = 1.0
    for j in range(n):
        norm = float(np.sum(mass * p**2))
        alpha[j] = float(np.sum(mass * s * p**2)) / norm
        beta[j] = norm / norm_prev if j else norm
        p_prev, p = p, (s - alpha[j]) * p - (beta[j] if j else 0.0) * p_prev
        norm_prev = norm

    if n == 1:
        return alpha.copy(), np.array([1.0])
    nodes, vectors = eigh_tridiagonal(alpha, np.sqrt(beta[1:]))
    weights = beta[0] * vectors[0, :] ** 2
    return nodes, weights / np.sum(weights)


def split_axis_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """1-d rule for N(0,1): the half-normal rule mirrored on both sides of 0."""
    s, w = half_normal_rule(n)
    return np.concatenate([-s[::-1], s]), 0.5 * np.concatenate([w[::-1], w])


def tensor_rule(nodes: np.ndarray, weights: np.ndarray, d: int) -> Tuple[np.ndarray, np.ndarray]:
    mesh = np.meshgrid(*([nodes] * d), indexing="ij")
    points = np.stack([g.ravel() for g in mesh], axis=-1)
    return points, reduce(np.kron, [weights] * d)


class ExpectationEngine:
    """Base class: a finite rule (Z_j, ω_j) approximating 𝔼 over Z ~ N(0, I_d)."""

    kind = "engine"

    def __init__(self):
        self._cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def _build(self, d: int) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def rule(self, d: int) -> Tuple[np.ndarray, np.ndarray]:
        if d not in self._cache:
            nodes, weights = self._build(d)
            nodes.setflags(write=False)
            weights.setflags(write=False)
            self._cache[d] = (nodes, weights)
        return self._cache[d]

    def expect(self, values: np.ndarray, d: int) -> np.ndarray:
        """Contract the trailing node axis of `values` against the weights."""
        _, weights = self.rule(d)
        return np.tensordot(np.asarray(values, dtype=float), weights, axes=([-1], [0]))

    def stderr(self, values: np.ndarray, d: int) -> np.ndarray:
        """Standard error of `expect`; zero for deterministic rules."""
        return np.zeros(np.shape(values)[:-1])

    def describe(self) -> str:
        return self.kind


class QuadratureEngine(ExpectationEngine):
    """Tensor product of split-axis Gauss rules."""

    kind = "quad"

    def __init__(self, nodes_per_half: Optional[int] = None):
        super().__init__()
        self.nodes_per_half = nodes_per_half or get_settings().HJB_QUAD_NODES

    def _build(self, d: int):
        nodes, weights = split_axis_rule(self.nodes_per_half)
        return tensor_rule(nodes, weights, d)

    def describe(self) -> str:
        return f"quad({self.nodes_per_half})"


class AnalyticEngine(QuadratureEngine):
    """
    Closed-form Gaussian moments of the weight polynomials.

    Payoffs are arbitrary callables, so their expectations still go through a high-order
    split-axis rule; everything that only involves the weights (moments of Z, the mean of
    𝒫²_{Σ,k} and the normalization term 𝔼[𝒫¹_g]) is computed exactly.
    """

    kind = "analytic"

    def __init__(self, nodes_per_half: int = 12):
        super().__init__(nodes_per_half)

    @staticmethod
    def moment(powers) -> float:
        """𝔼[Π Z_i^{a_i}] for independent standard normals."""
        return float(np.prod([gaussian_moment(int(a)) for a in np.atleast_1d(powers)]))

    @staticmethod
    def half_moment(n: int) -> float:
        """𝔼[Zⁿ; Z > 0] = ½·2^{n/2}Γ((n+1)/2)/√π."""
        if n < 0:
            raise ConfigurationError("moment order must be nonnegative")
        return 0.5 * 2.0 ** (0.5 * n) * math.gamma(0.5 * (n + 1)) / math.sqrt(math.pi)

    @staticmethod
    def expected_poly2(Sigma, k: int) -> float:
        """𝔼[𝒫²_{Σ,k}(Z)] = Σ_j ‖Σ_j‖²(c_k·𝔼[N^{4k+2}] − d_k)."""
        c, d = ck_dk(k)
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.ndim != 2 or Sigma.shape[1] == 0:
            return 0.0
        return float(np.sum(Sigma**2)) * (c * gaussian_moment(4 * k + 2) - d)

    @staticmethod
    def expected_upwind(g, h: float) -> np.ndarray:
        """h·𝔼[𝒫¹_g(W/h)], the drift part of the normalization T^D."""
        return h * expected_upwind1(g, h)

    def describe(self) -> str:
        return f"analytic({self.nodes_per_half})"


class RademacherEngine(ExpectationEngine):
    """Increments ±√h with probability ½ per axis."""

    kind = "rademacher"

    def _build(self, d: int):
        return tensor_rule(np.array([-1.0, 1.0]), np.array([0.5, 0.5]), d)


class MonteCarloEngine(ExpectationEngine):
    """Pre-drawn table of standard normal samples, deterministic given (seed, N, d)."""

    kind = "mc"

    def __init__(self, n_samples: int, seed: Optional[int] = 0):
        super().__init__()
        if n_samples < 2:
            raise ConfigurationError("Monte Carlo needs at least two samples")
        self.n_samples = n_samples
        self.seed = resolve_seed(seed)

    def _build(self, d: int):
        rng = np.random.default_rng([self.seed if self.seed is not None else 0, d])
        nodes = rng.standard_normal((self.n_samples, d))
        return nodes, np.full(self.n_samples, 1.0 / self.n_samples)

    def stderr(self, values: np.ndarray, d: int) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.std(values, axis=-1, ddof=1) / math.sqrt(values.shape[-1])

    def describe(self) -> str:
        return f"mc({self.n_samples},seed={self.seed})"


def make_engine(
    kind: str,
    nodes_per_half: Optional[int] = None,
    n_samples: int = 100_000,
    seed: Optional[int] = 0,
) -> ExpectationEngine:
    if kind in ("quad", "quadrature"):
        return QuadratureEngine(nodes_per_half)
    if kind == "analytic":
        return AnalyticEngine(nodes_per_half or 12)
    if kind in ("mc", "monte_carlo"):
        return MonteCarloEngine(n_samples, seed)
    if kind == "rademacher":
        return RademacherEngine()
    raise ConfigurationError(f"unknown expectation engine {kind!r}")


@dataclass(frozen=True)
class EulerStepper:
    """S^m(x,W) = x + f̲^m(x)h + σ̲^m W for each mode's uncontrolled diffusion."""

    underlyings: Tuple[Underlying, ...]
    names: Tuple[str, ...] = field(default=())

    @classmethod
    def from_decomposition(cls, decomp) -> "EulerStepper":
        return cls(
            underlyings=tuple(md.underlying for md in decomp.modes),
            names=tuple(md.name for md in decomp.modes),
        )

    @classmethod
    def single(cls, sigma_bar, drift=None, A=None) -> "EulerStepper":
        sigma_bar = np.atleast_2d(np.asarray(sigma_bar, dtype=float))
        d = sigma_bar.shape[0]
        f0 = np.zeros(d) if drift is None else np.atleast_1d(np.asarray(drift, dtype=float))
        A = np.zeros((d, d)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        return cls(underlyings=(Underlying(A=A, f0=f0, sigma=sigma_bar),), names=("mode",))

    def index(self, m: Union[int, str]) -> int:
        if isinstance(m, str):
            return self.names.index(m)
        return int(m)

    def dim(self, m: Union[int, str] = 0) -> int:
        return self.underlyings[self.index(m)].sigma.shape[0]

    def step(self, m: Union[int, str], x, h: float, W) -> np.ndarray:
        und = self.underlyings[self.index(m)]
        x = np.asarray(x, dtype=float)
        return (x + und.drift(x) * h)[..., None, :] + np.asarray(W, dtype=float) @ und.sigma.T


def simulate(engine: ExpectationEngine, stepper: EulerStepper, m, x, t: float, h: float, phi: Phi):
    """Successor states and payoff values φ(t+h, S^m(x, W_j)) over the engine's rule."""
    d = stepper.dim(m)
    Z, _ = engine.rule(d)
    y = stepper.step(m, x, h, math.sqrt(h) * Z)
    values = np.asarray(phi(t + h, y), dtype=float)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise EngineError("non-finite integrand", location=y[tuple(bad)])
    return Z, y, values


def _finish(engine, integrand, d, return_stderr):
    estimate = engine.expect(integrand, d)
    if return_stderr:
        return estimate, engine.stderr(integrand, d)
    return estimate


def estimate_d0(engine, stepper, m, x, t, h, phi: Phi, return_stderr: bool = False):
    """𝔼[φ(t+h, S^m(x,W_h))]."""
    _, _, values = simulate(engine, stepper, m, x, t, h, phi)
    return _finish(engine, values, stepper.dim(m), return_stderr)


def estimate_d1_upwind(engine, stepper, m, g, x, t, h, phi: Phi, r: float, return_stderr=False):
    """𝔼[(φ(t+h, S^m(x,W_h)) − r)·𝒫¹_g(W_h/h)]."""
    Z, _, values = simulate(engine, stepper, m, x, t, h, phi)
    weight = upwind1_eval(np.asarray(g, dtype=float), Z / math.sqrt(h))
    return _finish(engine, (values - r) * weight, stepper.dim(m), return_stderr)


def estimate_d2_poly(engine, stepper, m, Sigma, k, x, t, h, phi: Phi, return_stderr=False):
    """h⁻¹𝔼[φ(t+h, S^m(x,W_h))·𝒫²_{Σ,k}(W_h/√h)]."""
    Z, _, values = simulate(engine, stepper, m, x, t, h, phi)
    weight = poly2_eval(Sigma, k, Z)
    return _finish(engine, values * weight / h, stepper.dim(m), return_stderr)


def estimate_d1_ftw(engine, stepper, x, t, h, phi: Phi, m=0) -> np.ndarray:
    """Gradient estimate 𝔼[φ(t+h, X̂)·σ̲⁻ᵀW/h]."""
    Z, _, values = simulate(engine, stepper, m, x, t, h, phi)
    W = math.sqrt(h) * Z
    weight = ftw_eval(1, stepper.underlyings[stepper.index(m)].sigma, h, W)
    return engine.expect(np.moveaxis(values[..., None] * weight, -2, -1), stepper.dim(m))


def estimate_d2_ftw(engine, stepper, x, t, h, phi: Phi, m=0) -> np.ndarray:
    """Hessian estimate 𝔼[φ(t+h, X̂)·σ̲⁻ᵀ(WWᵀ − hI)σ̲⁻¹/h²]."""
    Z, _, values = simulate(engine, stepper, m, x, t, h, phi)
    W = math.sqrt(h) * Z
    weight = ftw_eval(2, stepper.underlyings[stepper.index(m)].sigma, h, W)
    integrand = values[..., None, None] * weight
    return engine.expect(np.moveaxis(integrand, -3, -1), stepper.dim(m))


def kushner_upwind(
    v: Callable[[float, float], float], t: float, x: float, h: float, g: float
) -> float:
    """Upwind finite difference g₊(v(t+h,x+√h)−v(t,x))/√h + g₋(v(t+h,x−√h)−v(t,x))/√h."""
    sq = math.sqrt(h)
    g_plus, g_minus = max(g, 0.0), max(-g, 0.0)
    centre = v(t, x)
    return g_plus * (v(t + h, x + sq) - centre) / sq + g_minus * (v(t + h, x - sq) - centre) / sq


"""
One-step scheme operators.

For a mode m, a control u and a state x every variant is a linear functional of the
payoff values at the successor points y_j = x + f̲h + σ̲√h·Z_j, plus h·ℓ(x,u), divided
by a positive normalization T^D:

    T^N_{m,u}(φ)(x) = Σ_j ω_j c_j(m,u,x) φ(t+h, y_j) + h ℓ(x,u)

The node coefficients c_j are what the monotonicity audit inspects. For batches of
states the sums are assembled from a few payoff moments per mode, because Σ does not
depend on u and g enters linearly through its positive and negative parts.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from ..exceptions import ConfigurationError, EngineError, StepSizeError
from ..models.schemas import SchemeConfig
from .decomp import Decomposition, ModeDecomposition, min_k
from .expect import AnalyticEngine, EulerStepper, ExpectationEngine
from .weights import poly2_eval, upwind1_eval

logger = logging.getLogger("hjb_maxplus.schemes")

Phi = Callable[[float, np.ndarray], np.ndarray]


def resolve_k(cfg: SchemeConfig, decomp: Decomposition) -> int:
    return min_k(decomp) if cfg.k is None else cfg.k


def lam(decomp: Decomposition) -> float:
    """λ = max(0, −inf δ) over the modes."""
    return max(0.0, -min(md.mode.delta for md in decomp.modes))


def h0(cfg: SchemeConfig, decomp: Decomposition) -> float:
    """Validity threshold min(1/(2λ), h0_user)."""
    bound = math.inf
    lam_ = lam(decomp)
    if lam_ > 0:
        bound = 1.0 / (2.0 * lam_)
    if cfg.h0 is not None:
        bound = min(bound, cfg.h0)
    return bound


def validate_step(cfg: SchemeConfig, decomp: Decomposition) -> None:
    if cfg.delta_mode == "nonnegative" and lam(decomp) > 0:
        raise ConfigurationError("delta_mode 'nonnegative' but some mode has δ < 0")
    threshold = h0(cfg, decomp)
    if cfg.h > threshold:
        raise StepSizeError(f"h={cfg.h} exceeds the validity threshold h0={threshold:.6g}")


def guaranteed_monotone(cfg: SchemeConfig, decomp: Decomposition) -> bool:
    """Whether the weights are provably nonnegative for this configuration."""
    return (
        cfg.variant == "new_upwind"
        and decomp.a_bar <= 4 * resolve_k(cfg, decomp) + 2
        and cfg.h <= h0(cfg, decomp)
    )


def _split_delta(cfg: SchemeConfig, delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(part of δ kept in T^D, part δ₋ moved into T^N)."""
    if cfg.delta_mode == "general_sign":
        return np.maximum(delta, 0.0), np.maximum(-delta, 0.0)
    return delta, np.zeros_like(delta)


def _second_order_weights(cfg: SchemeConfig, md: ModeDecomposition, k: int, Z: np.ndarray):
    """Per-node second-order weight: 𝒫²_{Σ,k}(Z), or the FTW weight ½(|ΣᵀZ|² − tr ΣΣᵀ)."""
    Sigma = md.residual_factor()
    if cfg.variant == "ftw_baseline":
        if Sigma.shape[1] == 0:
            return np.zeros(Z.shape[0])
        return 0.5 * (np.sum((Z @ Sigma) ** 2, axis=-1) - np.sum(Sigma**2))
    return poly2_eval(Sigma, k, Z)


def _denominator(cfg: SchemeConfig, h: float, G: np.ndarray, delta: np.ndarray, engine=None):
    if cfg.variant != "new_upwind":
        return np.ones(delta.shape)
    kept, _ = _split_delta(cfg, delta)
    if engine is None or isinstance(engine, AnalyticEngine):
        drift_term = AnalyticEngine.expected_upwind(G, h)
    else:
        Z, omega = engine.rule(G.shape[-1])
        zp, zm = omega @ np.maximum(Z, 0.0), omega @ np.maximum(-Z, 0.0)
        drift_term = 2.0 * math.sqrt(h) * (
            np.maximum(G, 0.0) @ zp + np.maximum(-G, 0.0) @ zm
        )
    TD = 1.0 + h * kept + drift_term
    if np.any(TD <= 0):
        raise StepSizeError(f"T^D = {float(np.min(TD)):.3e} ≤ 0; reduce h below {h}")
    return TD


class NodeWeights(NamedTuple):
    """Linear-functional form of T^N/T^D at one state for a list of controls."""

    coefficients: np.ndarray  # (n_u, n_nodes) multipliers c_j of the payoff
    omega: np.ndarray  # (n_nodes,) engine weights
    successors: np.ndarray  # (n_nodes, d)
    running: np.ndarray  # (n_u,) h·ℓ(x,u)
    denominator: np.ndarray  # (n_u,) T^D

    def numerator(self, values: np.ndarray) -> np.ndarray:
        return (self.coefficients * self.omega) @ values + self.running


def node_weights(
    cfg: SchemeConfig,
    decomp: Decomposition,
    engine: ExpectationEngine,
    m,
    x,
    controls: Optional[np.ndarray] = None,
) -> NodeWeights:
    """Node coefficients of T^N for mode m at state x (all grid controls by default)."""
    md = decomp.mode(m)
    h = cfg.h
    k = resolve_k(cfg, decomp)
    U = decomp.problem.controls if controls is None else np.atleast_2d(controls)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Z, omega = engine.rule(x.shape[0])
    stepper = EulerStepper.from_decomposition(decomp)
    successors = stepper.step(decomp.problem.mode_index(m), x, h, math.sqrt(h) * Z)

    G = md.g(x, U)
    delta = md.mode.discount(x, U)
    ell = md.mode.reward(x, U)
    second = _second_order_weights(cfg, md, k, Z)

    if cfg.variant == "new_upwind":
        _, moved = _split_delta(cfg, delta)
        first = math.sqrt(h) * upwind1_eval(G[:, None, :], Z[None, :, :])
        coefficients = 1.0 + h * moved[:, None] + first + second[None, :]
    else:
        first = math.sqrt(h) * (G @ Z.T)
        coefficients = (1.0 - h * delta)[:, None] + first + second[None, :]
    return NodeWeights(
        coefficients=coefficients,
        omega=np.asarray(omega),
        successors=successors,
        running=h * ell,
        denominator=_denominator(cfg, h, G, delta),
    )


@dataclass
class LayerResult:
    """T_{t,h}(φ) on a batch of states with the maximizing (mode, control index)."""

    values: np.ndarray
    mode: np.ndarray
    control: np.ndarray


def _mode_ratios(cfg, decomp, engine, i, X, t, phi, U=None):
    """(T^N, T^D) arrays of shape (N, n_u) for mode index i on the states X."""
    md = decomp.modes[i]
    h = cfg.h
    k = resolve_k(cfg, decomp)
    U = decomp.problem.controls if U is None else U
    d = X.shape[-1]
    Z, omega = engine.rule(d)
    stepper = EulerStepper.from_decomposition(decomp)
    Y = stepper.step(i, X, h, math.sqrt(h) * Z)
    values = np.asarray(phi(t + h, Y), dtype=float)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise EngineError("non-finite payoff", location=Y[tuple(bad)])

    weighted = values * omega
    M0 = weighted.sum(axis=-1)
    M2 = weighted @ _second_order_weights(cfg, md, k, Z)

    Xb = X[:, None, :]
    G = md.g(Xb, U[None, :, :])
    delta = md.mode.discount(Xb, U[None, :, :])
    ell = md.mode.reward(Xb, U[None, :, :])

    if cfg.variant == "new_upwind":
        Mp = weighted @ np.maximum(Z, 0.0)
        Mm = weighted @ np.maximum(-Z, 0.0)
        _, moved = _split_delta(cfg, delta)
        first = 2.0 * math.sqrt(h) * (
            np.sum(np.maximum(G, 0.0) * Mp[:, None, :], axis=-1)
            + np.sum(np.maximum(-G, 0.0) * Mm[:, None, :], axis=-1)
        )
        TN = M0[:, None] * (1.0 + h * moved) + first + M2[:, None] + h * ell
    else:
        MZ = weighted @ Z
        first = math.sqrt(h) * np.sum(G * MZ[:, None, :], axis=-1)
        TN = M0[:, None] * (1.0 - h * delta) + first + M2[:, None] + h * ell
    return TN, _denominator(cfg, h, G, delta)


def apply_T_batch(
    cfg: SchemeConfig, decomp: Decomposition, engine: ExpectationEngine, t: float, phi: Phi, X
) -> LayerResult:
    """T_{t,h}(φ) at every row of X, ties to the first (mode, control)."""
    validate_step(cfg, decomp)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    best = np.full(X.shape[0], -np.inf)
    best_mode = np.zeros(X.shape[0], dtype=int)
    best_control = np.zeros(X.shape[0], dtype=int)
    for i in range(len(decomp.modes)):
        TN, TD = _mode_ratios(cfg, decomp, engine, i, X, t, phi)
        ratio = TN / TD
        j = np.argmax(ratio, axis=1)
        value = ratio[np.arange(X.shape[0]), j]
        better = value > best
        best = np.where(better, value, best)
        best_mode = np.where(better, i, best_mode)
        best_control = np.where(better, j, best_control)
    return LayerResult(values=best, mode=best_mode, control=best_control)


def mode_layer(cfg, decomp, engine, m, t: float, phi: Phi, X) -> np.ndarray:
    """max_u T^N/T^D of a single mode at every row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    TN, TD = _mode_ratios(cfg, decomp, engine, decomp.problem.mode_index(m), X, t, phi)
    return np.max(TN / TD, axis=1)


def sample_ratios(cfg, decomp, m, X, Z, values) -> np.ndarray:
    """
    One-increment surrogate of max_u T^N/T^D: row i pairs the state X[i] with the single
    normalized increment Z[i] and the payoff value values[i].
    """
    md = decomp.mode(m)
    h = cfg.h
    k = resolve_k(cfg, decomp)
    U = decomp.problem.controls
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    values = np.asarray(values, dtype=float)

    Xb = X[:, None, :]
    G = md.g(Xb, U[None, :, :])
    delta = md.mode.discount(Xb, U[None, :, :])
    ell = md.mode.reward(Xb, U[None, :, :])
    second = _second_order_weights(cfg, md, k, Z)[:, None]
    if cfg.variant == "new_upwind":
        _, moved = _split_delta(cfg, delta)
        first = math.sqrt(h) * upwind1_eval(G, Z[:, None, :])
        coefficients = 1.0 + h * moved + first + second
    else:
        first = math.sqrt(h) * np.sum(G * Z[:, None, :], axis=-1)
        coefficients = 1.0 - h * delta + first + second
    TN = coefficients * values[:, None] + h * ell
    return np.max(TN / _denominator(cfg, h, G, delta), axis=1)


def apply_TN(cfg, decomp, engine, m, u, t, x, phi: Phi) -> float:
    """Numerator T^N_{t,h,m,u}(φ)(x)."""
    validate_step(cfg, decomp)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    U = np.atleast_2d(np.asarray(u, dtype=float))
    TN, _ = _mode_ratios(cfg, decomp, engine, decomp.problem.mode_index(m), X, t, phi, U)
    return float(TN[0, 0])


def apply_TD(cfg, decomp, m, u, x, engine: Optional[ExpectationEngine] = None) -> float:
    """
    Normalization T^D = 1 + hδ + h𝔼[𝒫¹_g(W/h)], closed form unless an engine is given.

    In general-sign mode only δ₊ enters; the other variants have T^D = 1.
    """
    md = decomp.mode(m)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    U = np.atleast_2d(np.asarray(u, dtype=float))
    G = md.g(x, U)
    delta = md.mode.discount(x, U)
    return float(_denominator(cfg, cfg.h, G, delta, engine)[0])


def apply_T(cfg, decomp, engine, t: float, phi: Phi, x, return_argmax: bool = False):
    """T_{t,h}(φ)(x) = max over modes and controls of T^N/T^D."""
    result = apply_T_batch(cfg, decomp, engine, t, phi, np.atleast_1d(np.asarray(x, dtype=float)))
    value = float(result.values[0])
    if return_argmax:
        return value, (int(result.mode[0]), int(result.control[0]))
    return value


def argmax_T(cfg, decomp, engine, t: float, phi: Phi, x) -> Tuple[int, int]:
    """(mode index, control index) attaining T_{t,h}(φ)(x)."""
    return apply_T(cfg, decomp, engine, t, phi, x, return_argmax=True)[1]


def apply_K(cfg, decomp, engine, t: float, x, r: float, v: Phi) -> float:
    """𝒦 = −max_{m,u} h⁻¹(T^N(v(t+h,·))(x) − T^D(x)·r)."""
    validate_step(cfg, decomp)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    best = -np.inf
    for i in range(len(decomp.modes)):
        TN, TD = _mode_ratios(cfg, decomp, engine, i, X, t, v)
        best = max(best, float(np.max((TN[0] - TD[0] * r) / cfg.h)))
    return -best


def stability_bound(prob, decomp: Decomposition, cfg: SchemeConfig, t: float) -> float:
    """e^{C(T−t)}(‖ψ‖∞ + (T−t)·max‖ℓ‖∞) with C = 2λ, sup-norms on the audit window."""
    points = prob.audit_points()
    psi_sup = float(np.max(np.abs(prob.terminal(points))))
    ell_sup = max(
        float(np.max(np.abs(mode.reward(points[:, None, :], prob.controls[None, :, :]))))
        for mode in prob.modes
    )
    remaining = prob.horizon - t
    return math.exp(2.0 * lam(decomp) * remaining) * (psi_sup + remaining * ell_sup)

"""
Probabilistic max-plus solver.

The value function at every time of the scheme is represented as the pointwise max of
finitely many concave quadratic forms. Going backward from the terminal forms, each
sampled trajectory point x_t contributes one new form: the forms of the next layer are
selected at the successors of x_t, the selection is frozen, and the resulting one-step
value x ↦ G^m̄(q̃) is fitted by least squares on the quadratic monomials.
"""
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from ..config import get_settings, resolve_seed
from ..exceptions import (
    ConfigurationError,
    MaxPlusStateError,
    RegressionError,
    SamplingError,
    TimeIndexError,
)
from ..models.schemas import SamplePlan, SchemeConfig
from ..tasks.pool import WorkerPool
from .decomp import Decomposition
from .expect import EulerStepper, ExpectationEngine, QuadratureEngine
from .problem import ControlProblem, check_terminal_forms, time_grid
from .quadratic import QuadraticForm
from .schemes import mode_layer, node_weights, sample_ratios, validate_step

logger = logging.getLogger("hjb_maxplus.maxplus")

NSD_TOLERANCE = 1e-9
RIDGE = 1e-10
BRUTE_FORCE_LIMIT = 10_000
TIME_TOLERANCE = 1e-9


class FormStack:
    """A non-empty list of quadratic forms stacked for vectorized evaluation."""

    def __init__(self, forms: Sequence[QuadraticForm]):
        if len(forms) == 0:
            raise MaxPlusStateError("empty set of quadratic forms")
        self.forms = list(forms)
        self.Q = np.stack([form.Q for form in self.forms])
        self.b = np.stack([form.b for form in self.forms])
        self.c = np.array([form.c for form in self.forms])

    def __len__(self) -> int:
        return len(self.forms)

    def values(self, x) -> np.ndarray:
        """q(x, z) for every form z; x of shape (..., d) gives (..., n_forms)."""
        x = np.asarray(x, dtype=float)
        quad = 0.5 * np.einsum("...i,nij,...j->...n", x, self.Q, x)
        return quad + x @ self.b.T + self.c

    def max(self, x) -> np.ndarray:
        return np.max(self.values(x), axis=-1)


@dataclass
class MaxPlusValue:
    """v^{h,N}(t, ·) = max over the forms stored for t, for every time of the scheme."""

    problem: str
    h: float
    times: np.ndarray
    layers: List[List[QuadraticForm]]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > TIME_TOLERANCE:
            raise TimeIndexError(f"t={t} is not a time of the scheme grid")
        return i

    def forms(self, t: float) -> List[QuadraticForm]:
        return self.layers[self.time_index(t)]

    def evaluate(self, t: float, x) -> np.ndarray:
        """max_z q(x, z) over Z_t; x of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        return FormStack(self.forms(t)).max(x)

    def cardinalities(self) -> List[int]:
        return [len(layer) for layer in self.layers]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "problem": self.problem,
            "h": self.h,
            "times": [
                {"t": float(t), "forms": [form.to_dict() for form in layer]}
                for t, layer in zip(self.times, self.layers)
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MaxPlusValue":
        try:
            entries = data["times"]
            return cls(
                problem=data["problem"],
                h=float(data["h"]),
                times=np.array([float(entry["t"]) for entry in entries]),
                layers=[[QuadraticForm.from_dict(f) for f in entry["forms"]] for entry in entries],
                metadata=dict(data.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed forms document: {exc}") from exc

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MaxPlusValue":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read forms file {path}: {exc}") from exc
        return cls.from_dict(data)


def G_operator(
    decomp: Decomposition,
    engine: ExpectationEngine,
    m_bar,
    t: float,
    h: float,
    x,
    k: Optional[int],
    q_tilde: Callable[[np.ndarray], np.ndarray],
    delta_mode: str = "lower_bounded",
) -> float:
    """
    G^m̄_{t,h,x}(q̃) = max_u (D⁰ + h{ℓ + D¹ + D²})(q̃) / T^D.

    `q_tilde` maps Brownian increments W of shape (n, d) to payoff values; the
    expectations run over the engine's nodes W = √h·Z.
    """
    cfg = SchemeConfig(variant="new_upwind", k=k, h=h, delta_mode=delta_mode)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Z, _ = engine.rule(x.shape[0])
    values = np.asarray(q_tilde(math.sqrt(h) * Z), dtype=float)

    def phi(s, Y):
        return values[None, :]

    return float(mode_layer(cfg, decomp, engine, m_bar, t, phi, x[None, :])[0])


def node_operator(cfg: SchemeConfig, decomp: Decomposition, engine, m, x) -> Callable:
    """The finite-sample operator v ↦ max_u T^N(v)/T^D at x, v given per engine node."""
    weights = node_weights(cfg, decomp, engine, m, x)

    def G(values) -> float:
        ratios = weights.numerator(np.asarray(values, dtype=float)) / weights.denominator
        return float(np.max(ratios))

    return G


def linear_operator(weights, offset: float = 0.0) -> Callable:
    """v ↦ Σ_j w_j v_j + offset."""
    weights = np.asarray(weights, dtype=float)
    return lambda values: float(weights @ np.asarray(values, dtype=float) + offset)


@dataclass
class DistributivityReport:
    value_of_max: float
    best_selection_value: float
    selection: List[int]
    method: str
    selections_tried: int

    @property
    def gap(self) -> float:
        return abs(self.value_of_max - self.best_selection_value)

    def holds(self, tol: float = 1e-12) -> bool:
        return self.gap <= tol * max(1.0, abs(self.value_of_max))


def distribute_check(
    G: Callable[[np.ndarray], float], values, brute_force_limit: int = BRUTE_FORCE_LIMIT
) -> DistributivityReport:
    """
    Compare G(max_z φ(·, z)) with the best G(φ^z̄) over selections z̄: samples → Z.

    `values[j, z]` is φ at sample j for the form z. All |Z|^{|W|} selections are tried
    when there are at most `brute_force_limit` of them, otherwise the pointwise argmax
    selection is used.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n_samples, n_forms = values.shape
    rows = np.arange(n_samples)
    value_of_max = G(np.max(values, axis=1))

    if n_forms**n_samples <= brute_force_limit:
        best, best_selection, tried = -math.inf, None, 0
        for selection in itertools.product(range(n_forms), repeat=n_samples):
            tried += 1
            value = G(values[rows, list(selection)])
            if value > best:
                best, best_selection = value, list(selection)
        method = "brute_force"
    else:
        best_selection = [int(j) for j in np.argmax(values, axis=1)]
        best = G(values[rows, best_selection])
        method, tried = "greedy", 1
    return DistributivityReport(
        value_of_max=float(value_of_max),
        best_selection_value=float(best),
        selection=best_selection,
        method=method,
        selections_tried=tried,
    )


def select_forms(forms: Union[FormStack, Sequence[QuadraticForm]], successors) -> np.ndarray:
    """Index of the maximizing form at each successor state, ties to the lowest index."""
    stack = forms if isinstance(forms, FormStack) else FormStack(forms)
    return np.argmax(stack.values(successors), axis=-1)


class RegressionFit(NamedTuple):
    form: QuadraticForm
    rms: float
    ridge: bool


def quadratic_basis(X: np.ndarray) -> np.ndarray:
    """Columns 1, x_i, x_i·x_j (i ≤ j)."""
    X = np.atleast_2d(X)
    iu, ju = np.triu_indices(X.shape[1])
    return np.hstack([np.ones((X.shape[0], 1)), X, X[:, iu] * X[:, ju]])


def regress_quadratic(
    X, y, t: float = 0.0, omega: Optional[int] = None, mode: Optional[str] = None
) -> RegressionFit:
    """
    Least-squares quadratic fit of the targets y at the states X.

    A rank-deficient design falls back to a ridge solve. Q is projected on the
    negative semidefinite cone by clamping its positive eigenvalues to zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise RegressionError(t, omega, mode, f"{X.shape[0]} states for {y.shape[0]} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise RegressionError(t, omega, mode, "non-finite regression sample")
    d = X.shape[1]
    A = quadratic_basis(X)

    ridge = False
    beta, _, rank, _ = scipy.linalg.lstsq(A, y)
    if rank < A.shape[1]:
        ridge = True
        normal = A.T @ A
        penalty = RIDGE * max(float(np.trace(normal)) / A.shape[1], 1.0)
        try:
            beta = scipy.linalg.solve(
                normal + penalty * np.eye(A.shape[1]), A.T @ y, assume_a="pos"
            )
        except scipy.linalg.LinAlgError as exc:
            raise RegressionError(t, omega, mode, str(exc)) from exc
    if not np.all(np.isfinite(beta)):
        raise RegressionError(t, omega, mode, "non-finite coefficients")

    Q = np.zeros((d, d))
    iu, ju = np.triu_indices(d)
    Q[iu, ju] += beta[1 + d :]
    Q[ju, iu] += beta[1 + d :]
    eigenvalues, vectors = np.linalg.eigh(Q)
    if eigenvalues[-1] > 0.0:
        if eigenvalues[-1] > NSD_TOLERANCE:
            logger.debug(
                f"t={t:.6g} ω={omega} m̄={mode}: clamped eigenvalue {eigenvalues[-1]:.3e}"
            )
        Q = (vectors * np.minimum(eigenvalues, 0.0)) @ vectors.T
    form = QuadraticForm(Q=Q, b=beta[1 : 1 + d], c=beta[0], omega=omega, mode=mode)
    rms = float(np.sqrt(np.mean((form(X) - y) ** 2)))
    form = QuadraticForm(Q=form.Q, b=form.b, c=form.c, omega=omega, mode=mode, residual=rms)
    return RegressionFit(form=form, rms=rms, ridge=ridge)


def representation_warnings(prob: ControlProblem) -> List[str]:
    """Reasons why v^h need not be exactly a finite max of concave quadratics."""
    reasons = []
    if prob.psi is not None:
        reasons.append("terminal reward is not the max of the configured forms")
    for mode in prob.modes:
        joint = np.block([[mode.Lxx, mode.Lxu], [mode.Lxu.T, mode.Luu]])
        if np.linalg.eigvalsh(0.5 * (joint + joint.T))[-1] > NSD_TOLERANCE:
            reasons.append(f"running reward of mode {mode.name!r} is not concave in (x, u)")
    return reasons


def _simulate(prob, stepper, representatives, plan, times, rng):
    """Paths X̂^m(t, ω) of shape (n_rep, n_t, N_in, d) and the increments (N_in, n_t − 1, d)."""
    d = prob.dim_x
    h = times[1] - times[0]
    mean = np.zeros(d) if plan.x0_mean is None else np.asarray(plan.x0_mean, dtype=float)
    if mean.shape != (d,):
        raise SamplingError(f"x0_mean has {mean.size} entries, the state has {d}")
    X0 = mean + plan.x0_std * rng.standard_normal((plan.n_in, d))
    dW = math.sqrt(h) * rng.standard_normal((plan.n_in, times.size - 1, d))
    paths = np.empty((len(representatives), times.size, plan.n_in, d))
    for r, rep in enumerate(representatives):
        paths[r, 0] = X0
        for i in range(times.size - 1):
            paths[r, i + 1] = stepper.step(rep, paths[r, i], h, dW[:, i, None, :])[:, 0, :]
    return paths, dW


@dataclass
class _LayerTask:
    """Shared data of one (t, representative) pass over the samples ω."""

    t: float
    rep: str
    members: List[int]
    X_reg: np.ndarray
    increments: np.ndarray  # (n_nodes, d) increments W at which selections are made
    table: np.ndarray  # (n_reg, n_nodes, n_forms) next-layer forms at regression successors
    pair_states: Optional[np.ndarray] = None
    pair_nodes: Optional[np.ndarray] = None


def _targets(cfg, decomp, engine, task: _LayerTask, m_bar: int, values: np.ndarray):
    if task.pair_states is None:

        def phi(s, Y):
            return values

        return task.X_reg, mode_layer(cfg, decomp, engine, m_bar, task.t, phi, task.X_reg)
    y = sample_ratios(cfg, decomp, m_bar, task.pair_states, task.pair_nodes, values.ravel())
    return task.pair_states, y


def _forms_for_samples(cfg, decomp, engine, stepper, stack, task, states, omegas):
    """One new form per sample ω: steps (2)(a)-(c) for x_t = states[i]."""
    forms, ridges = [], 0
    n_nodes = task.increments.shape[0]
    columns = np.arange(n_nodes)
    names = decomp.problem.mode_names
    for omega, x_t in zip(omegas, states):
        successors = stepper.step(task.rep, x_t, cfg.h, task.increments)
        selection = select_forms(stack, successors)
        values = task.table[:, columns, selection]
        best, best_value = None, -math.inf
        for m_bar in task.members:
            X, y = _targets(cfg, decomp, engine, task, m_bar, values)
            fit = regress_quadratic(X, y, t=task.t, omega=int(omega), mode=names[m_bar])
            ridges += fit.ridge
            value = float(fit.form(x_t))
            if value > best_value:
                best, best_value = fit.form, value
        forms.append(best)
    return forms, ridges


def solve_maxplus(
    prob: ControlProblem,
    decomp: Decomposition,
    cfg: SchemeConfig,
    plan: SamplePlan,
    engine: Optional[ExpectationEngine] = None,
    threads: Optional[int] = None,
) -> MaxPlusValue:
    """
    Backward max-plus recursion from the terminal forms.

    With target_mode "quadrature" the one-step values at the N_x regression states are
    computed with the engine's nodes as increments; with "sample" they use the N_w
    sampled increments one at a time, the max over controls staying at sample level.
    """
    validate_step(cfg, decomp)
    if plan.n_w > plan.n_in:
        raise SamplingError(f"N_w={plan.n_w} exceeds the N_in={plan.n_in} available samples")
    engine = engine or QuadratureEngine()
    times = time_grid(prob.horizon, cfg.h)
    seed = resolve_seed(plan.seed)
    rng = np.random.default_rng(seed)
    stepper = EulerStepper.from_decomposition(decomp)
    representatives = decomp.representatives
    d = prob.dim_x

    warnings = representation_warnings(prob)
    for reason in warnings:
        logger.warning(f"{prob.name}: {reason}; the max-plus forms only approximate v^h")
    epsilon = check_terminal_forms(prob)

    paths, dW = _simulate(prob, stepper, representatives, plan, times, rng)
    layers: List[List[QuadraticForm]] = [[] for _ in times]
    layers[-1] = list(prob.terminal_forms)
    Z, _ = engine.rule(d)
    sqrt_h = math.sqrt(cfg.h)
    chunk = max(1, get_settings().HJB_CHUNK_SIZE // 8)
    ridge_total = 0

    logger.info(
        f"Max-plus on {prob.name}: {times.size - 1} steps, N=({plan.n_in}, {plan.n_x}, "
        f"{plan.n_w}), {len(representatives)} simulated modes, targets {plan.target_mode}"
    )
    with WorkerPool(threads=threads) as pool:
        for i in range(times.size - 2, -1, -1):
            t = float(times[i])
            stack = FormStack(layers[i + 1])
            idx_x = rng.choice(plan.n_in, plan.n_x, replace=False)
            idx_w = rng.choice(plan.n_in, plan.n_w, replace=False)
            new_forms: List[QuadraticForm] = []
            ridges = 0
            for r, rep in enumerate(representatives):
                X_reg = paths[r, i, idx_x]
                if plan.target_mode == "quadrature":
                    increments = sqrt_h * Z
                    table = stack.values(stepper.step(rep, X_reg, cfg.h, increments))
                    task = _LayerTask(t, rep, decomp.members(rep), X_reg, increments, table)
                else:
                    increments = dW[idx_w, i]
                    table = stack.values(stepper.step(rep, X_reg, cfg.h, increments))
                    task = _LayerTask(
                        t,
                        rep,
                        decomp.members(rep),
                        X_reg,
                        increments,
                        table,
                        pair_states=np.repeat(X_reg, plan.n_w, axis=0),
                        pair_nodes=np.tile(increments / sqrt_h, (plan.n_x, 1)),
                    )
                states = paths[r, i]
                blocks = [
                    np.arange(s, min(s + chunk, plan.n_in)) for s in range(0, plan.n_in, chunk)
                ]

                def run(omegas, task=task, states=states):
                    return _forms_for_samples(
                        cfg, decomp, engine, stepper, stack, task, states[omegas], omegas
                    )

                for forms, count in pool.map(run, blocks):
                    new_forms.extend(forms)
                    ridges += count
            if ridges:
                logger.warning(f"t={t:.6g}: {ridges} regressions fell back to ridge")
            ridge_total += ridges
            layers[i] = new_forms
            logger.debug(f"layer t={t:.6g}: {len(new_forms)} forms")

    return MaxPlusValue(
        problem=prob.name,
        h=cfg.h,
        times=times,
        layers=layers,
        metadata={
            "engine": engine.describe(),
            "variant": cfg.variant,
            "k": cfg.k,
            "n_in": plan.n_in,
            "n_x": plan.n_x,
            "n_w": plan.n_w,
            "seed": seed,
            "target_mode": plan.target_mode,
            "terminal_deviation": epsilon,
            "ridge_fallbacks": ridge_total,
            "warnings": warnings,
        },
    )


def bootstrap_sup_error(
    mpv: MaxPlusValue,
    oracle: Callable[[float, np.ndarray], np.ndarray],
    points,
    t: float = 0.0,
    resamples: int = 200,
    seed: Optional[int] = 0,
):
    """Sup over `points` of |v^{h,N}(t,x) − oracle(t,x)| and its bootstrap standard error."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    errors = np.abs(mpv.evaluate(t, points) - oracle(t, points))
    rng = np.random.default_rng(resolve_seed(seed))
    draws = rng.integers(0, errors.size, (resamples, errors.size))
    sups = np.max(errors[draws], axis=1)
    return float(np.max(errors)), float(np.std(sups, ddof=1))

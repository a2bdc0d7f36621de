"""
Deterministic reference solver on a truncated rectangular grid.

The backward recursion v(t) = T_{t,h}(v(t+h)) is evaluated at every grid node with a
quadrature engine; between nodes the layer t+h is interpolated multilinearly and
continued linearly outside the grid.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..config import get_settings
from ..exceptions import ConfigurationError, TimeIndexError
from ..models.schemas import ConvergenceReport, ConvergenceRow, GridSpec, SchemeConfig
from ..tasks.pool import WorkerPool
from .consistency import fit_order
from .decomp import Decomposition
from .expect import ExpectationEngine, QuadratureEngine
from .problem import ControlProblem, time_grid
from .schemes import LayerResult, apply_T_batch, stability_bound

logger = logging.getLogger("hjb_maxplus.gridsolve")

TIME_TOLERANCE = 1e-9


@dataclass
class ValueGrid:
    """Values v^h(t, x) on the nodes of a rectangular grid, per time of the scheme."""

    axes: List[np.ndarray]
    times: np.ndarray
    values: np.ndarray  # (n_t, *shape)
    core_lo: float
    core_hi: float
    policy_mode: Optional[np.ndarray] = None  # (n_t - 1, *shape), mode index
    policy_control: Optional[np.ndarray] = None  # (n_t - 1, *shape), control index
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def shape(self):
        return tuple(axis.size for axis in self.axes)

    @property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def core_mask(self) -> np.ndarray:
        nodes = self.nodes
        tol = 1e-12
        return np.all((nodes >= self.core_lo - tol) & (nodes <= self.core_hi + tol), axis=-1)

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > TIME_TOLERANCE:
            raise TimeIndexError(f"t={t} is not a time of the scheme grid")
        return i

    def interpolator(self, i: int) -> RegularGridInterpolator:
        return RegularGridInterpolator(
            tuple(self.axes), self.values[i], method="linear", bounds_error=False, fill_value=None
        )


def padded_axes(prob: ControlProblem, decomp: Decomposition, spec: GridSpec) -> List[np.ndarray]:
    """Uniform axes covering [lo − pad, hi + pad] with the core spacing."""
    dx = (spec.hi - spec.lo) / (spec.points - 1)
    pad = spec.padding if spec.padding is not None else default_padding(prob, decomp, spec)
    extra = int(math.ceil(pad / dx - 1e-9))
    axis = spec.lo + dx * np.arange(-extra, spec.points + extra)
    return [axis.copy() for _ in range(prob.dim_x)]


def default_padding(prob: ControlProblem, decomp: Decomposition, spec: GridSpec) -> float:
    """Six standard deviations of the uncontrolled diffusion plus its drift over [0, T]."""
    reach = max(abs(spec.lo), abs(spec.hi))
    T = prob.horizon
    pad = 0.0
    for md in decomp.modes:
        und = md.underlying
        spread = 6.0 * float(np.linalg.norm(und.sigma, 2)) * math.sqrt(T)
        drift = (float(np.linalg.norm(und.A, 2)) * reach + float(np.linalg.norm(und.f0))) * T
        pad = max(pad, spread + drift)
    return pad


def _truncation_escape(vg_axes, decomp, engine, cfg, spec) -> float:
    """Largest distance by which a successor of a core node leaves the padded grid."""
    d = len(vg_axes)
    Z, _ = engine.rule(d)
    corners = np.array(np.meshgrid(*([[spec.lo, spec.hi]] * d), indexing="ij")).reshape(d, -1).T
    lo, hi = vg_axes[0][0], vg_axes[0][-1]
    worst = 0.0
    for md in decomp.modes:
        und = md.underlying
        Y = (corners + und.drift(corners) * cfg.h)[:, None, :] + math.sqrt(cfg.h) * Z @ und.sigma.T
        worst = max(worst, float(np.max(np.maximum(lo - Y, Y - hi))))
    return worst


def solve_grid(
    prob: ControlProblem,
    decomp: Decomposition,
    cfg: SchemeConfig,
    spec: GridSpec,
    engine: Optional[ExpectationEngine] = None,
    threads: Optional[int] = None,
    truncation_margin: float = 0.0,
) -> ValueGrid:
    """Backward recursion from ψ at T down to t = 0 on the padded grid."""
    max_dim = get_settings().HJB_MAX_GRID_DIM
    if prob.dim_x > max_dim and not spec.allow_high_dim:
        raise ConfigurationError(
            f"grid solver is limited to d ≤ {max_dim}; set allow_high_dim to override"
        )
    engine = engine or QuadratureEngine(spec.nodes_per_dim)
    times = time_grid(prob.horizon, cfg.h)
    axes = padded_axes(prob, decomp, spec)
    shape = tuple(axis.size for axis in axes)
    vg = ValueGrid(
        axes=axes,
        times=times,
        values=np.empty((times.size,) + shape),
        core_lo=spec.lo,
        core_hi=spec.hi,
        policy_mode=np.empty((times.size - 1,) + shape, dtype=int),
        policy_control=np.empty((times.size - 1,) + shape, dtype=int),
    )
    nodes = vg.nodes
    vg.values[-1] = prob.terminal(nodes).reshape(shape)

    escape = _truncation_escape(axes, decomp, engine, cfg, spec)
    warnings = []
    if escape > truncation_margin:
        message = f"successor nodes leave the padded grid by {escape:.3g}"
        warnings.append(message)
        logger.warning(f"{prob.name}: {message}")
    vg.metadata.update(
        {"engine": engine.describe(), "padding": float(spec.lo - axes[0][0]), "warnings": warnings}
    )

    logger.info(
        f"Solving {prob.name} on {nodes.shape[0]} nodes, {times.size - 1} steps, "
        f"variant {cfg.variant}"
    )
    with WorkerPool(threads=threads) as pool:
        for i in range(times.size - 2, -1, -1):
            phi_interp = vg.interpolator(i + 1)

            def phi(s, Y, interp=phi_interp):
                return interp(Y)

            def evaluate(chunk, t=times[i], phi=phi) -> LayerResult:
                return apply_T_batch(cfg, decomp, engine, t, phi, chunk)

            parts = pool.map_rows(evaluate, nodes)
            vg.values[i] = np.concatenate([p.values for p in parts]).reshape(shape)
            vg.policy_mode[i] = np.concatenate([p.mode for p in parts]).reshape(shape)
            vg.policy_control[i] = np.concatenate([p.control for p in parts]).reshape(shape)
            logger.debug(f"layer t={times[i]:.6g} done")
    if not np.all(np.isfinite(vg.values)):
        raise ConfigurationError("grid solution is not finite; check the problem bounds and h")
    return vg


def eval_grid(vg: ValueGrid, t: float, x, interpolate_time: bool = False):
    """
    Value at (t, x). A batch has shape (n, d); in one dimension a flat (n,) array is a
    batch of n points as well. A single point (a scalar when d = 1, a (d,) vector
    otherwise) gives a float.

    Off the time grid a TimeIndexError is raised unless `interpolate_time` selects the
    piecewise-linear extension in t.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and len(vg.axes) > 1)
    if x.ndim == 0 or (x.ndim == 1 and len(vg.axes) == 1):
        x = x.reshape(-1, 1)
    elif x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != len(vg.axes):
        raise ConfigurationError(f"points have dimension {x.shape[-1]}, grid has {len(vg.axes)}")
    try:
        i = vg.time_index(t)
        result = vg.interpolator(i)(x)
    except TimeIndexError:
        if not interpolate_time or not vg.times[0] <= t <= vg.times[-1]:
            raise
        j = int(np.searchsorted(vg.times, t)) - 1
        j = min(max(j, 0), vg.times.size - 2)
        theta = (t - vg.times[j]) / (vg.times[j + 1] - vg.times[j])
        result = (1.0 - theta) * vg.interpolator(j)(x) + theta * vg.interpolator(j + 1)(x)
    return float(result[0]) if single else result


def policy_at(vg: ValueGrid, prob: ControlProblem, i: int):
    """(mode names, control vectors) of the argmax at every node of layer i."""
    modes = [prob.modes[k].name for k in vg.policy_mode[i].ravel()]
    controls = prob.controls[vg.policy_control[i].ravel()]
    return modes, controls


def stability_excess(vg: ValueGrid, prob, decomp, cfg) -> float:
    """Largest ‖v^h(t,·)‖∞ − envelope over the core window and all times (≤ 0 is stable)."""
    mask = vg.core_mask()
    worst = -math.inf
    for i, t in enumerate(vg.times):
        sup = float(np.max(np.abs(vg.values[i].ravel()[mask])))
        worst = max(worst, sup - stability_bound(prob, decomp, cfg, t))
    return worst


def grid_spacing_for(h: float, spec: GridSpec, dx_ratio: float) -> GridSpec:
    """Copy of spec with about dx_ratio·h spacing on the core window."""
    points = int(round((spec.hi - spec.lo) / (dx_ratio * h))) + 1
    return spec.model_copy(update={"points": max(points, 2)})


def sup_error_against(vg: ValueGrid, oracle, t: float = 0.0) -> float:
    """Sup over core nodes of |v^h(t,x) − oracle(t,x)|."""
    mask = vg.core_mask()
    nodes = vg.nodes[mask]
    values = vg.values[vg.time_index(t)].ravel()[mask]
    return float(np.max(np.abs(values - oracle(t, nodes))))


def convergence_study(
    prob: ControlProblem,
    decomp: Decomposition,
    h_list: Sequence[float],
    oracle,
    spec: Optional[GridSpec] = None,
    variant: str = "new_upwind",
    k: Optional[int] = None,
    delta_mode: str = "lower_bounded",
    dx_ratio: float = 0.5,
    engine: Optional[ExpectationEngine] = None,
    threads: Optional[int] = None,
) -> ConvergenceReport:
    """Sup-error at t=0 against `oracle(t, x)` along `h_list`, with fitted order."""
    spec = spec or GridSpec()
    rows = []
    for h in h_list:
        cfg = SchemeConfig(variant=variant, k=k, h=h, delta_mode=delta_mode)
        vg = solve_grid(prob, decomp, cfg, grid_spacing_for(h, spec, dx_ratio), engine, threads)
        error = sup_error_against(vg, oracle)
        rows.append(ConvergenceRow(h=h, sup_error=error))
        logger.info(f"{prob.name} h={h:.6g}: sup error {error:.3e}")
    p_hat, constant = fit_order([r.h for r in rows], [r.sup_error for r in rows])
    return ConvergenceReport(problem=prob.name, rows=rows, p_hat=p_hat, constant=constant)

"""
Control problems and their Hamiltonians.

A problem has finitely many switching modes, a finite control grid approximating the
continuum control set, affine drifts, constant diffusion factors and discounts, and
quadratic running rewards. The terminal reward is the max of the configured concave
quadratic forms unless an explicit `psi` callable replaces it.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..exceptions import ConfigurationError, ProblemDomainError
from ..models.builtin_problems import BUILTIN_PROBLEMS
from ..models.schemas import BoundsConfig, ControlAxis, ModeConfig, ProblemConfig
from .quadratic import QuadraticForm, max_of_forms

logger = logging.getLogger("hjb_maxplus.problem")

ModeRef = Union[int, str]


def _matrix(values: Optional[Sequence[float]], rows: int, cols: int) -> np.ndarray:
    if values is None:
        return np.zeros((rows, cols))
    return np.asarray(values, dtype=float).reshape(rows, cols)


def _vector(values: Optional[Sequence[float]], n: int) -> np.ndarray:
    if values is None:
        return np.zeros(n)
    return np.asarray(values, dtype=float).reshape(n)


@dataclass(frozen=True)
class Underlying:
    """Uncontrolled diffusion f̲(x) = A x + f0 with constant factor σ̲."""

    A: np.ndarray
    f0: np.ndarray
    sigma: np.ndarray

    def drift(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.A.T + self.f0


@dataclass(frozen=True)
class ModeCoefficients:
    """Coefficients of one switching mode, evaluated with numpy broadcasting."""

    name: str
    A: np.ndarray
    B: np.ndarray
    f0: np.ndarray
    sigma: np.ndarray
    delta: float
    Lxx: np.ndarray
    Lxu: np.ndarray
    Luu: np.ndarray
    lx: np.ndarray
    lu: np.ndarray
    l0: float
    underlying: Optional[Underlying] = None
    projection: Optional[str] = None

    @classmethod
    def from_config(cls, cfg: ModeConfig, d: int, p: int) -> "ModeCoefficients":
        underlying = None
        if cfg.underlying is not None and cfg.underlying.sigma is not None:
            underlying = Underlying(
                A=_matrix(cfg.underlying.A, d, d),
                f0=_vector(cfg.underlying.f0, d),
                sigma=_matrix(cfg.underlying.sigma, d, d),
            )
        return cls(
            name=cfg.name,
            A=_matrix(cfg.A, d, d),
            B=_matrix(cfg.B, d, p),
            f0=_vector(cfg.f0, d),
            sigma=_matrix(cfg.sigma, d, d),
            delta=float(cfg.delta),
            Lxx=_matrix(cfg.Lxx, d, d),
            Lxu=_matrix(cfg.Lxu, d, p),
            Luu=_matrix(cfg.Luu, p, p),
            lx=_vector(cfg.lx, d),
            lu=_vector(cfg.lu, p),
            l0=float(cfg.l0),
            underlying=underlying,
            projection=cfg.projection,
        )

    @staticmethod
    def _batch(x: np.ndarray, u: np.ndarray) -> Tuple[int, ...]:
        return np.broadcast_shapes(x.shape[:-1], u.shape[:-1])

    def drift(self, x, u) -> np.ndarray:
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        return x @ self.A.T + u @ self.B.T + self.f0

    def diffusion(self, x, u) -> np.ndarray:
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        return np.broadcast_to(self.sigma, self._batch(x, u) + self.sigma.shape)

    def covariance(self, x, u) -> np.ndarray:
        s = self.diffusion(x, u)
        return s @ np.swapaxes(s, -1, -2)

    def discount(self, x, u) -> np.ndarray:
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        return np.full(self._batch(x, u), self.delta)

    def reward(self, x, u) -> np.ndarray:
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        return (
            0.5 * np.sum((x @ self.Lxx) * x, axis=-1)
            + np.sum((x @ self.Lxu) * u, axis=-1)
            + 0.5 * np.sum((u @ self.Luu) * u, axis=-1)
            + x @ self.lx
            + u @ self.lu
            + self.l0
        )


@dataclass(frozen=True)
class ControlProblem:
    """An immutable control problem. Coefficient methods broadcast over leading axes."""

    name: str
    dim_x: int
    horizon: float
    modes: Tuple[ModeCoefficients, ...]
    controls: np.ndarray
    control_axes: Tuple[ControlAxis, ...]
    terminal_forms: Tuple[QuadraticForm, ...]
    terminal_epsilon: float = 1e-9
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    audit_lo: float = -2.0
    audit_hi: float = 2.0
    audit_count: int = 9
    seed: Optional[int] = None
    description: str = ""
    psi: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    config: Optional[ProblemConfig] = field(default=None, compare=False, repr=False)

    @property
    def dim_u(self) -> int:
        return self.controls.shape[1]

    @property
    def mode_names(self) -> List[str]:
        return [mode.name for mode in self.modes]

    def mode_index(self, m: ModeRef) -> int:
        if isinstance(m, (int, np.integer)):
            if not 0 <= m < len(self.modes):
                raise ConfigurationError(f"mode index {m} out of range")
            return int(m)
        try:
            return self.mode_names.index(m)
        except ValueError:
            raise ConfigurationError(f"unknown mode {m!r}") from None

    def mode(self, m: ModeRef) -> ModeCoefficients:
        return self.modes[self.mode_index(m)]

    def terminal(self, x) -> np.ndarray:
        """ψ at x of shape (..., d)."""
        if self.psi is not None:
            return np.asarray(self.psi(np.asarray(x, dtype=float)), dtype=float)
        return max_of_forms(self.terminal_forms, x)

    def audit_points(self) -> np.ndarray:
        axis = np.linspace(self.audit_lo, self.audit_hi, self.audit_count)
        mesh = np.meshgrid(*([axis] * self.dim_x), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)


@dataclass(frozen=True)
class HamiltonianPoint:
    """Arguments (x, r, p, Γ) of a Hamiltonian; Γ is symmetrized on construction."""

    x: np.ndarray
    r: float
    p: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))
        object.__setattr__(self, "Gamma", 0.5 * (gamma + gamma.T))
        if self.p.shape != x.shape or self.Gamma.shape != (x.size, x.size):
            raise ConfigurationError("Hamiltonian point has inconsistent dimensions")


def control_grid(axes: Sequence[ControlAxis]) -> np.ndarray:
    """Tensor grid of controls in lexicographic order (first axis varies slowest)."""
    if not axes:
        raise ConfigurationError("control grid needs at least one axis")
    ranges = [np.linspace(a.min, a.max, a.count) for a in axes]
    mesh = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def problem_from_config(config: ProblemConfig) -> ControlProblem:
    d, p = config.d, config.p
    forms = tuple(
        QuadraticForm(Q=_matrix(f.Q, d, d), b=_vector(f.b, d), c=f.c) for f in config.terminal_forms
    )
    for i, form in enumerate(forms):
        if not form.is_nsd():
            raise ConfigurationError(
                f"terminal form {i} of {config.name!r} is not concave "
                f"(largest eigenvalue {form.max_eigenvalue():.3e})"
            )
    return ControlProblem(
        name=config.name,
        dim_x=d,
        horizon=config.T,
        modes=tuple(ModeCoefficients.from_config(m, d, p) for m in config.modes),
        controls=control_grid(config.controls),
        control_axes=tuple(config.controls),
        terminal_forms=forms,
        terminal_epsilon=config.terminal_epsilon,
        bounds=config.bounds,
        audit_lo=config.audit.lo,
        audit_hi=config.audit.hi,
        audit_count=config.audit.points,
        seed=config.seed,
        description=config.description,
        config=config,
    )


def parse_problem_config(data: Dict[str, Any]) -> ProblemConfig:
    try:
        return ProblemConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid problem config: {e}") from e


def load_problem(source: Union[str, Path, Dict[str, Any], ProblemConfig]) -> ControlProblem:
    """Load a built-in problem by name, a JSON config file, or an in-memory config."""
    if isinstance(source, ProblemConfig):
        return problem_from_config(source)
    if isinstance(source, dict):
        return problem_from_config(parse_problem_config(source))
    name = str(source)
    if name in BUILTIN_PROBLEMS:
        return problem_from_config(parse_problem_config(BUILTIN_PROBLEMS[name]))
    path = Path(name)
    if not path.is_file():
        raise ConfigurationError(
            f"unknown problem {name!r}; built-ins are {', '.join(sorted(BUILTIN_PROBLEMS))}"
        )
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"malformed problem file {path}: {e}") from e
    logger.info(f"Loaded problem config from {path}")
    return problem_from_config(parse_problem_config(data))


def list_problems() -> List[Dict[str, Any]]:
    """Summary rows of the built-in registry."""
    rows = []
    for name, doc in sorted(BUILTIN_PROBLEMS.items()):
        rows.append(
            {
                "name": name,
                "d": doc["d"],
                "T": doc["T"],
                "modes": ",".join(m["name"] for m in doc["modes"]),
                "controls": int(np.prod([axis["count"] for axis in doc["controls"]])),
                "description": doc.get("description", ""),
            }
        )
    return rows


# Hamiltonians
def _require_finite(
    values, mode: ModeCoefficients, controls: np.ndarray, x, what: str, grid: bool = False
):
    """Raise a domain error naming the first non-finite (m, u, x)."""
    values = np.asarray(values)
    if np.all(np.isfinite(values)):
        return
    bad = np.argwhere(~np.isfinite(values))[0]
    if grid:
        # values laid out as (audit point, control, ...)
        raise ProblemDomainError(mode.name, controls[bad[1]], np.asarray(x)[bad[0], 0], what)
    raise ProblemDomainError(mode.name, controls[bad[0]], x, what)


def _mode_values(prob: ControlProblem, mode: ModeCoefficients, pt: HamiltonianPoint, u: np.ndarray):
    f = mode.drift(pt.x, u)
    a = mode.covariance(pt.x, u)
    delta = mode.discount(pt.x, u)
    ell = mode.reward(pt.x, u)
    for values, what in ((f, "drift"), (a, "diffusion"), (delta, "discount"), (ell, "reward")):
        _require_finite(np.reshape(values, (len(u), -1)), mode, u, pt.x, what)
    return 0.5 * np.einsum("...ij,ji->...", a, pt.Gamma) + f @ pt.p - delta * pt.r + ell


def hamiltonian_mu(prob: ControlProblem, m: ModeRef, u, pt: HamiltonianPoint) -> float:
    """ℋ^{m,u} = ½tr(σσᵀΓ) + f·p − δr + ℓ at one mode and control."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    mode = prob.mode(m)
    value = _mode_values(prob, mode, pt, u[None, :])[0]
    if not np.isfinite(value):
        raise ProblemDomainError(mode.name, u, pt.x, "Hamiltonian")
    return float(value)


def hamiltonian_m(
    prob: ControlProblem, m: ModeRef, pt: HamiltonianPoint, return_argmax: bool = False
):
    """ℋ^m: max over the control grid, ties to the first control."""
    if len(prob.controls) == 0:
        raise ConfigurationError("empty control grid")
    values = _mode_values(prob, prob.mode(m), pt, prob.controls)
    j = int(np.argmax(values))
    if return_argmax:
        return float(values[j]), j
    return float(values[j])


def hamiltonian(prob: ControlProblem, pt: HamiltonianPoint, return_argmax: bool = False):
    """ℋ: max over modes and controls, ties to the first (mode, control)."""
    if not prob.modes:
        raise ConfigurationError("problem has no modes")
    best, arg = -np.inf, (0, 0)
    for i in range(len(prob.modes)):
        value, j = hamiltonian_m(prob, i, pt, return_argmax=True)
        if value > best:
            best, arg = value, (i, j)
    if return_argmax:
        return best, arg
    return best


# Audits
@dataclass
class BoundsAudit:
    """Measured sup-norms on the audit window against the declared bounds."""

    measured: Dict[str, float]
    declared: Dict[str, Optional[float]]
    violations: List[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_bounds(prob: ControlProblem) -> BoundsAudit:
    x = prob.audit_points()[:, None, :]
    u = prob.controls[None, :, :]
    f_sup = sigma_sup = ell_sup = 0.0
    delta_inf = np.inf
    for mode in prob.modes:
        f = mode.drift(x, u)
        ell = mode.reward(x, u)
        _require_finite(f, mode, prob.controls, x, "drift", grid=True)
        _require_finite(ell, mode, prob.controls, x, "reward", grid=True)
        f_sup = max(f_sup, float(np.max(np.linalg.norm(f, axis=-1))))
        sigma_sup = max(sigma_sup, float(np.linalg.norm(mode.sigma, 2)))
        ell_sup = max(ell_sup, float(np.max(np.abs(ell))))
        delta_inf = min(delta_inf, mode.delta)

    measured = {"f_sup": f_sup, "sigma_sup": sigma_sup, "ell_sup": ell_sup, "delta_inf": delta_inf}
    declared = prob.bounds.model_dump()
    violations = []
    tol = 1e-9
    for key in ("f_sup", "sigma_sup", "ell_sup"):
        bound = declared[key]
        if bound is not None and measured[key] > bound * (1 + tol) + tol:
            violations.append(f"{key}: measured {measured[key]:.6g} exceeds declared {bound:.6g}")
    if declared["delta_inf"] is not None and delta_inf < declared["delta_inf"] - tol:
        violations.append(
            f"delta_inf: measured {delta_inf:.6g} below declared {declared['delta_inf']:.6g}"
        )
    for message in violations:
        logger.warning(f"{prob.name}: {message}")
    return BoundsAudit(measured=measured, declared=declared, violations=violations)


def check_terminal_forms(prob: ControlProblem) -> float:
    """Largest |max_z q(x,z) − ψ(x)| on the audit window."""
    x = prob.audit_points()
    deviation = np.max(np.abs(max_of_forms(prob.terminal_forms, x) - prob.terminal(x)))
    if deviation > prob.terminal_epsilon:
        logger.warning(
            f"{prob.name}: terminal forms deviate from ψ by {deviation:.3e} "
            f"(ε = {prob.terminal_epsilon:.3e})"
        )
    return float(deviation)


def control_grid_modulus(prob: ControlProblem) -> Dict[str, float]:
    """
    Largest change of (f, σσᵀ, δ, ℓ) between neighbouring control grid points.

    Sup-norm over the audit window, per mode. Small values indicate that the finite
    grid resolves the control dependence of the coefficients.
    """
    shape = tuple(axis.count for axis in prob.control_axes)
    x = prob.audit_points()[:, None, :]
    u = prob.controls[None, :, :]
    n_x = x.shape[0]
    result = {}
    for mode in prob.modes:
        fields = [
            mode.drift(x, u),
            mode.covariance(x, u).reshape(n_x, len(prob.controls), -1),
            mode.discount(x, u)[..., None],
            mode.reward(x, u)[..., None],
        ]
        worst = 0.0
        for values in fields:
            grid = values.reshape((n_x,) + shape + (values.shape[-1],))
            for axis in range(len(shape)):
                if shape[axis] > 1:
                    worst = max(worst, float(np.max(np.abs(np.diff(grid, axis=axis + 1)))))
        result[mode.name] = worst
    return result


def time_grid(horizon: float, h: float) -> np.ndarray:
    """Times 0, h, ..., T; h must divide T."""
    if h <= 0:
        raise ConfigurationError("time step must be positive")
    n = int(round(horizon / h))
    if n < 1 or abs(n * h - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigurationError(f"time step h={h} does not divide T={horizon}")
    return np.linspace(0.0, horizon, n + 1)

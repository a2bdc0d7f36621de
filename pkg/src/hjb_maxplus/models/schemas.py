from typing import Annotated, Dict, List, Literal, Optional

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator


def _flatten(value):
    """Accept nested lists and store matrices row-major as flat lists."""
    if value is None:
        return None
    if value and isinstance(value[0], (list, tuple)):
        return [float(v) for row in value for v in row]
    return [float(v) for v in value]


# Row-major matrix; nested lists are flattened on input
Matrix = Annotated[List[float], BeforeValidator(_flatten)]


def _check_len(name: str, value: Optional[List[float]], expected: int) -> None:
    if value is not None and len(value) != expected:
        raise ValueError(f"{name} has {len(value)} entries, expected {expected}")


# Problem configuration schemas
class ControlAxis(BaseModel):
    """One axis of the tensor control grid."""

    min: float
    max: float
    count: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.max < self.min:
            raise ValueError("control axis max must be ≥ min")
        return self


class TerminalFormConfig(BaseModel):
    """Concave quadratic form ½xᵀQx + b·x + c with Q given row-major."""

    Q: Matrix
    b: List[float]
    c: float = 0.0


class UnderlyingConfig(BaseModel):
    """Uncontrolled diffusion f̲(x) = A x + f0, σ̲ constant, used by the schemes."""

    A: Optional[Matrix] = None
    f0: Optional[List[float]] = None
    sigma: Optional[Matrix] = None


class ModeConfig(BaseModel):
    """
    Coefficients of one switching mode.

    Drift f = A x + B u + f0, constant diffusion factor sigma, constant discount
    delta and running reward
    ℓ = ½xᵀ Lxx x + xᵀ Lxu u + ½uᵀ Luu u + lx·x + lu·u + l0.
    """

    name: str
    A: Optional[Matrix] = None
    B: Optional[Matrix] = None
    f0: Optional[List[float]] = None
    sigma: Matrix
    delta: float = 0.0
    Lxx: Optional[Matrix] = None
    Lxu: Optional[Matrix] = None
    Luu: Optional[Matrix] = None
    lx: Optional[List[float]] = None
    lu: Optional[List[float]] = None
    l0: float = 0.0
    underlying: Optional[UnderlyingConfig] = None
    projection: Optional[str] = Field(
        None, description="Name of the mode whose simulations this mode shares (π(m))"
    )


class BoundsConfig(BaseModel):
    """Declared coefficient bounds, audited on the audit window."""

    f_sup: Optional[float] = None
    sigma_sup: Optional[float] = None
    ell_sup: Optional[float] = None
    delta_inf: Optional[float] = None


class AuditWindow(BaseModel):
    lo: float = -2.0
    hi: float = 2.0
    points: int = Field(9, ge=2)


class ProblemConfig(BaseModel):
    """A control problem as it appears in a JSON config file."""

    name: str
    description: str = ""
    d: int = Field(..., ge=1)
    T: float = Field(..., gt=0)
    modes: List[ModeConfig] = Field(..., min_length=1)
    controls: List[ControlAxis] = Field(..., min_length=1)
    terminal_forms: List[TerminalFormConfig] = Field(..., min_length=1)
    terminal_epsilon: float = Field(1e-9, ge=0)
    bounds: BoundsConfig = Field(default_factory=BoundsConfig)
    audit: AuditWindow = Field(default_factory=AuditWindow)
    seed: Optional[int] = None

    @property
    def p(self) -> int:
        return len(self.controls)

    @model_validator(mode="after")
    def _shapes(self):
        d, p = self.d, self.p
        names = [m.name for m in self.modes]
        if len(set(names)) != len(names):
            raise ValueError("mode names must be unique")
        for mode in self.modes:
            _check_len(f"{mode.name}.A", mode.A, d * d)
            _check_len(f"{mode.name}.B", mode.B, d * p)
            _check_len(f"{mode.name}.f0", mode.f0, d)
            _check_len(f"{mode.name}.sigma", mode.sigma, d * d)
            _check_len(f"{mode.name}.Lxx", mode.Lxx, d * d)
            _check_len(f"{mode.name}.Lxu", mode.Lxu, d * p)
            _check_len(f"{mode.name}.Luu", mode.Luu, p * p)
            _check_len(f"{mode.name}.lx", mode.lx, d)
            _check_len(f"{mode.name}.lu", mode.lu, p)
            if mode.underlying is not None:
                _check_len(f"{mode.name}.underlying.A", mode.underlying.A, d * d)
                _check_len(f"{mode.name}.underlying.f0", mode.underlying.f0, d)
                _check_len(f"{mode.name}.underlying.sigma", mode.underlying.sigma, d * d)
            if mode.projection is not None and mode.projection not in names:
                raise ValueError(f"{mode.name}.projection names unknown mode {mode.projection!r}")
        for i, form in enumerate(self.terminal_forms):
            _check_len(f"terminal_forms[{i}].Q", form.Q, d * d)
            _check_len(f"terminal_forms[{i}].b", form.b, d)
        return self


# Scheme and solver configuration
class SchemeConfig(BaseModel):
    """Choice of time discretization operator."""

    variant: Literal["new_upwind", "prior_fodjo2", "ftw_baseline"] = "new_upwind"
    k: Optional[int] = Field(None, ge=0, le=7, description="𝒫² exponent index; None picks min_k")
    h: float = Field(..., gt=0)
    h0: Optional[float] = Field(None, gt=0, description="User validity threshold for h")
    delta_mode: Literal["nonnegative", "lower_bounded", "general_sign"] = "lower_bounded"


class GridSpec(BaseModel):
    """Truncated rectangular grid for the deterministic reference solver."""

    lo: float = -2.0
    hi: float = 2.0
    points: int = Field(41, ge=2)
    padding: Optional[float] = Field(
        None, ge=0, description="Extra width on each side; None derives it"
    )
    nodes_per_dim: Optional[int] = Field(None, ge=1)
    allow_high_dim: bool = False

    @model_validator(mode="after")
    def _ordered(self):
        if self.hi <= self.lo:
            raise ValueError("grid hi must exceed lo")
        return self


class SamplePlan(BaseModel):
    """Sample sizes and randomness of the probabilistic max-plus algorithm."""

    n_in: int = Field(..., ge=1)
    n_x: int = Field(..., ge=1)
    n_w: int = Field(..., ge=1)
    seed: int = 0
    x0_mean: Optional[List[float]] = None
    x0_std: float = Field(1.0, ge=0)
    target_mode: Literal["sample", "quadrature"] = "quadrature"

    @model_validator(mode="after")
    def _sizes(self):
        if self.n_x > self.n_in:
            raise ValueError("N_x must not exceed N_in")
        return self


# Report schemas
class ConsistencyRow(BaseModel):
    h: float
    error: float
    target: float
    estimate: float


class ConsistencyReport(BaseModel):
    estimator: str
    test_function: str
    engine: str
    rows: List[ConsistencyRow]
    p_hat: float


class ViolationRecord(BaseModel):
    trial: int
    x: List[float]
    margin: float


class MonotoneAuditReport(BaseModel):
    variant: str
    k: int
    h: float
    a_bar: float
    guaranteed: bool
    trials: int
    violations: int
    worst_margin: float
    negative_weight_nodes: int
    min_weight: float
    examples: List[ViolationRecord] = Field(default_factory=list)


class SubhomogeneityReport(BaseModel):
    h: float
    alpha: float
    lam: float
    trials: int
    violations: int
    worst_excess: float
    pass_through_exact: Optional[bool] = None


class ConvergenceRow(BaseModel):
    h: float
    sup_error: float


class ConvergenceReport(BaseModel):
    problem: str
    rows: List[ConvergenceRow]
    p_hat: float
    constant: float


class DecompositionRow(BaseModel):
    mode: str
    rank: int
    a_bar: float
    min_k: int
    trace_bound_ok: bool
    control_modulus: float


# Run manifest
class RunManifest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    command_line: List[str]
    config_hash: str
    seeds: Dict[str, Optional[int]] = Field(default_factory=dict)
    library_version: str
    wall_time: float
    outputs: Dict[str, str] = Field(default_factory=dict)

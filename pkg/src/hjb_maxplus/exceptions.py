"""
Error hierarchy for the solver.

Every error carries the exit code the command line maps it to.
"""
from typing import Any, Optional, Sequence


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_INVARIANT = 3


class HJBError(Exception):
    """Base class of all solver errors."""

    exit_code = EXIT_FAILURE


class ConfigurationError(HJBError, ValueError):
    """Malformed or inconsistent configuration (problem file, flags, grids)."""

    exit_code = EXIT_VALIDATION


class ProblemDomainError(HJBError):
    """A coefficient evaluated to a non-finite value."""

    def __init__(self, mode: Any, control: Any, x: Any, what: str = "coefficient"):
        self.mode = mode
        self.control = control
        self.x = x
        super().__init__(
            f"non-finite {what} at mode={mode!r}, u={_fmt(control)}, x={_fmt(x)}"
        )


class UnsupportedOracleError(HJBError):
    """The analytic oracle does not cover the requested problem."""


class RiccatiBlowUpError(HJBError):
    """The Riccati flow left the negative semidefinite cone or diverged."""

    def __init__(self, t: float, detail: str):
        self.t = t
        super().__init__(f"Riccati blow-up at t={t:.6g}: {detail}")


class DecompositionError(HJBError):
    """The underlying diffusion does not satisfy a ≤ σσᵀ in the Loewner order."""

    def __init__(self, mode: Any, x: Any, control: Any, eigenvalue: float):
        self.mode = mode
        self.x = x
        self.control = control
        self.eigenvalue = eigenvalue
        super().__init__(
            f"σσᵀ − a not positive semidefinite for mode={mode!r} at x={_fmt(x)}, "
            f"u={_fmt(control)}: smallest eigenvalue {eigenvalue:.3e}"
        )


class FactorizationError(HJBError):
    """Singular underlying diffusion factor."""


class StepSizeError(HJBError):
    """The time step is too large for the scheme to be well defined."""

    exit_code = EXIT_VALIDATION


class EngineError(HJBError):
    """An expectation engine met a non-finite integrand."""

    def __init__(self, message: str, location: Optional[Sequence[float]] = None):
        self.location = location
        if location is not None:
            message = f"{message} (sample location {_fmt(location)})"
        super().__init__(message)


class ReportError(HJBError):
    """A study cannot produce a meaningful report."""

    exit_code = EXIT_VALIDATION


class TimeIndexError(HJBError, KeyError):
    """A time outside the discretization grid was requested."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class MaxPlusStateError(HJBError):
    """Empty or inconsistent set of quadratic forms."""


class RegressionError(HJBError):
    """Quadratic regression failed even after ridge regularisation."""

    def __init__(self, t: float, omega: int, mode: Any, detail: str):
        self.t = t
        self.omega = omega
        self.mode = mode
        super().__init__(f"regression failed at t={t:.6g}, ω={omega}, m̄={mode!r}: {detail}")


class SamplingError(HJBError):
    """The sample plan cannot be realised."""

    exit_code = EXIT_VALIDATION


class InvariantViolation(HJBError):
    """A property guaranteed under the stated hypotheses failed."""

    exit_code = EXIT_INVARIANT


def _fmt(value: Any) -> str:
    try:
        import numpy as np

        arr = np.asarray(value, dtype=float)
        return np.array2string(arr, precision=6, separator=",")
    except (TypeError, ValueError):
        return repr(value)

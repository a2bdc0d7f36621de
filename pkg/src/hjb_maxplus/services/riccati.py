"""
Analytic oracle for linear-quadratic modes.

For f = A x + B u + f0, constant σ and δ, and concave quadratic ℓ, the value function
is v(t,x) = ½xᵀP(t)x + b(t)·x + c(t). Maximizing the Hamiltonian in u gives the
Riccati system integrated here backward from the terminal form.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from ..exceptions import InvariantViolation, RiccatiBlowUpError, UnsupportedOracleError
from .problem import ControlProblem, HamiltonianPoint, ModeRef, hamiltonian_mu, time_grid

logger = logging.getLogger("hjb_maxplus.riccati")

NSD_TOLERANCE = 1e-9
RESIDUAL_TOLERANCE = 1e-6
# Dense output is evaluated slightly past the ends of [0, T] by the stencil
TIME_STEP_FD = 1e-3


class _RiccatiSystem:
    """Right-hand side of the Riccati system in reversed time τ = T − t."""

    def __init__(self, mode, d: int):
        self.mode = mode
        self.d = d
        self.a = mode.sigma @ mode.sigma.T
        self.control_free = (
            not np.any(mode.B)
            and not np.any(mode.Lxu)
            and not np.any(mode.lu)
            and not np.any(mode.Luu)
        )
        if self.control_free:
            self.R = np.zeros((mode.Luu.shape[0],) * 2)
        else:
            try:
                self.R = -np.linalg.inv(mode.Luu)
            except np.linalg.LinAlgError:
                raise UnsupportedOracleError(f"mode {mode.name!r}: Luu is singular") from None

    def unpack(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        d = self.d
        P = y[: d * d].reshape(d, d)
        return 0.5 * (P + P.T), y[d * d : d * d + d], float(y[-1])

    def feedback(self, P: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m = self.mode
        return m.B.T @ P + m.Lxu.T, m.B.T @ b + m.lu

    def forward_derivatives(self, P: np.ndarray, b: np.ndarray, c: float):
        """(Ṗ, ḃ, ċ) in forward time t."""
        m = self.mode
        K, k = self.feedback(P, b)
        dP = -(P @ m.A + m.A.T @ P + m.Lxx - m.delta * P + K.T @ self.R @ K)
        db = -(m.A.T @ b + P @ m.f0 + m.lx - m.delta * b + K.T @ self.R @ k)
        dc = -(0.5 * np.trace(self.a @ P) + m.f0 @ b + m.l0 - m.delta * c + 0.5 * k @ self.R @ k)
        return dP, db, dc

    def __call__(self, tau: float, y: np.ndarray) -> np.ndarray:
        dP, db, dc = self.forward_derivatives(*self.unpack(y))
        return -np.concatenate([dP.ravel(), db, [dc]])


@dataclass
class RiccatiSolution:
    """Quadratic value function v(t,x) = ½xᵀP(t)x + b(t)·x + c(t) on a time grid."""

    times: np.ndarray
    P: np.ndarray
    b: np.ndarray
    c: np.ndarray
    horizon: float
    system: _RiccatiSystem
    dense: object

    def coefficients(self, t: float) -> Tuple[np.ndarray, np.ndarray, float]:
        return self.system.unpack(self.dense(self.horizon - t))

    def value(self, t: float, x) -> np.ndarray:
        P, b, c = self.coefficients(t)
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, P, x) + x @ b + c

    def gradient(self, t: float, x) -> np.ndarray:
        P, b, _ = self.coefficients(t)
        return np.asarray(x, dtype=float) @ P + b

    def control(self, t: float, x) -> np.ndarray:
        """Unconstrained maximizer u*(t,x)."""
        P, b, _ = self.coefficients(t)
        K, k = self.system.feedback(P, b)
        return (np.asarray(x, dtype=float) @ K.T + k) @ self.system.R.T

    def time_derivative(self, t: float, x, step: float = TIME_STEP_FD) -> float:
        """∂_t v from the integrated solution: five-point central difference of `value`."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ahead = [float(self.value(t + j * step, x)) for j in (1, 2)]
        behind = [float(self.value(t - j * step, x)) for j in (1, 2)]
        return (8.0 * (ahead[0] - behind[0]) - (ahead[1] - behind[1])) / (12.0 * step)

    def residual(self, prob: ControlProblem, m: ModeRef, t: float, x) -> float:
        """∂_t v + ℋ^{m,u*}(x, v, Dv, D²v) at the analytic maximizer."""
        P, _, _ = self.coefficients(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pt = HamiltonianPoint(x=x, r=float(self.value(t, x)), p=self.gradient(t, x), Gamma=P)
        return float(self.time_derivative(t, x) + hamiltonian_mu(prob, m, self.control(t, x), pt))


def _check_lq(prob: ControlProblem, m: Optional[ModeRef]):
    if m is None:
        if len(prob.modes) != 1:
            raise UnsupportedOracleError(
                f"{prob.name!r} has {len(prob.modes)} modes; the Riccati oracle needs one"
            )
        m = 0
    if prob.psi is not None or len(prob.terminal_forms) != 1:
        raise UnsupportedOracleError("the Riccati oracle needs a single quadratic terminal reward")
    mode = prob.mode(m)
    joint = np.block([[mode.Lxx, mode.Lxu], [mode.Lxu.T, mode.Luu]])
    if np.linalg.eigvalsh(0.5 * (joint + joint.T))[-1] > NSD_TOLERANCE:
        raise UnsupportedOracleError(f"mode {mode.name!r}: running reward is not concave")
    return prob.mode_index(m), mode


def riccati_solve(
    prob: ControlProblem, time_step: float, m: Optional[ModeRef] = None, check_residual: bool = True
) -> RiccatiSolution:
    """Integrate the Riccati system from T down to 0, sampled every `time_step`."""
    index, mode = _check_lq(prob, m)
    d = prob.dim_x
    T = prob.horizon
    times = time_grid(T, time_step)
    system = _RiccatiSystem(mode, d)

    form = prob.terminal_forms[0]
    y0 = np.concatenate([form.Q.ravel(), form.b, [form.c]])
    tau_eval = T - times[::-1]

    def blow_up(tau, y):
        return 1e12 - np.max(np.abs(y))

    blow_up.terminal = True

    sol = solve_ivp(
        system,
        (0.0, T),
        y0,
        method="DOP853",
        t_eval=tau_eval,
        dense_output=True,
        events=blow_up,
        rtol=1e-12,
        atol=1e-12,
    )
    if sol.status != 0 or sol.t.shape[0] != times.shape[0]:
        t_fail = T - (sol.t[-1] if sol.t.size else 0.0)
        raise RiccatiBlowUpError(t_fail, sol.message or "integration stopped early")

    n = times.shape[0]
    states = sol.y.T[::-1]
    P = np.empty((n, d, d))
    b = np.empty((n, d))
    c = np.empty(n)
    for i in range(n):
        P[i], b[i], c[i] = system.unpack(states[i])
        top = np.linalg.eigvalsh(P[i])[-1]
        if top > NSD_TOLERANCE:
            raise RiccatiBlowUpError(
                times[i], f"P lost negative semidefiniteness (eigenvalue {top:.3e})"
            )

    solution = RiccatiSolution(
        times=times, P=P, b=b, c=c, horizon=T, system=system, dense=sol.sol
    )
    if check_residual:
        tolerance = 10.0 * time_step**4 + RESIDUAL_TOLERANCE
        points = prob.audit_points()
        worst = max(
            abs(solution.residual(prob, index, t, x)) for t in times[:-1] for x in points
        )
        if worst > tolerance:
            raise InvariantViolation(
                f"Riccati residual {worst:.3e} exceeds {tolerance:.3e} for {prob.name!r}"
            )
        logger.info(f"Riccati oracle for {prob.name!r}: max residual {worst:.3e}")
    return solution

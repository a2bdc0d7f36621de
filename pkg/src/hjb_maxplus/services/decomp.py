"""
Decomposition of the mode Hamiltonians into a linear diffusion part and a remainder.

Each mode m gets an uncontrolled diffusion (f̲, σ̲) with a = σ̲σ̲ᵀ ≤ σσᵀ. The remainder
is described by the residual factor Σ, with σ̲ΣΣᵀσ̲ᵀ + a = σσᵀ, and the drift residual
g = σ̲⁻¹(f − f̲). Modes may share one uncontrolled diffusion through the projection π.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..exceptions import ConfigurationError, DecompositionError, FactorizationError
from .problem import ControlProblem, ModeCoefficients, ModeRef, Underlying

logger = logging.getLogger("hjb_maxplus.decomp")

LOEWNER_TOLERANCE = 1e-10
RANK_CUTOFF = 1e-12
ZERO_PIVOT = 1e-14
A_BAR_HEADROOM = 1.05
DEFAULT_SHRINK = 0.99


def pivoted_cholesky(A: np.ndarray, cutoff: float = RANK_CUTOFF) -> np.ndarray:
    """
    Low-rank factor L with L Lᵀ = A for a symmetric positive semidefinite A.

    Pivots below `cutoff` times the leading pivot end the factorization, so the
    returned factor has one column per numerically nonzero direction.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    piv = np.arange(n)
    rank = n
    leading = None

    for i in range(n):
        diag = A.diagonal()
        j = i + int(np.argmax(diag[i:]))
        pivot = diag[j]
        if leading is None:
            leading = pivot
            if leading <= ZERO_PIVOT:
                rank = 0
                break
        elif pivot <= cutoff * leading:
            rank = i
            break

        if j != i:
            A[:, [i, j]] = A[:, [j, i]]
            A[[i, j], :] = A[[j, i], :]
            piv[[i, j]] = piv[[j, i]]

        A[i, i] = math.sqrt(A[i, i])
        A[i + 1 :, i] /= A[i, i]
        A[i + 1 :, i + 1 :] -= np.outer(A[i + 1 :, i], A[i + 1 :, i])

    L = np.tril(A)[:, :rank]
    inverse = np.empty(n, dtype=int)
    inverse[piv] = np.arange(n)
    return L[inverse, :]


@dataclass(frozen=True)
class ModeDecomposition:
    """Decomposition data of one mode."""

    mode: ModeCoefficients
    underlying: Underlying
    sigma_inv: np.ndarray
    Sigma: np.ndarray
    representative: str

    @property
    def name(self) -> str:
        return self.mode.name

    @property
    def sigma_bar(self) -> np.ndarray:
        return self.underlying.sigma

    @property
    def a(self) -> np.ndarray:
        return self.underlying.sigma @ self.underlying.sigma.T

    @property
    def rank(self) -> int:
        return self.Sigma.shape[1]

    @property
    def trace(self) -> float:
        """tr(ΣΣᵀ)."""
        return float(np.sum(self.Sigma**2))

    def underlying_drift(self, x) -> np.ndarray:
        return self.underlying.drift(x)

    def residual_factor(self, x=None, u=None) -> np.ndarray:
        """Σ(x,u); constant for the constant diffusions a config can express."""
        return self.Sigma

    def g(self, x, u) -> np.ndarray:
        """Drift residual σ̲⁻¹(f − f̲), broadcasting over leading axes of x and u."""
        x = np.asarray(x, dtype=float)
        return (self.mode.drift(x, u) - self.underlying.drift(x)) @ self.sigma_inv.T

    def reconstruct_covariance(self) -> np.ndarray:
        """σ̲ΣΣᵀσ̲ᵀ + a."""
        s = self.sigma_bar @ self.Sigma
        return s @ s.T + self.a


@dataclass(frozen=True)
class Decomposition:
    problem: ControlProblem
    modes: Tuple[ModeDecomposition, ...]
    a_bar: float

    def mode(self, m: ModeRef) -> ModeDecomposition:
        return self.modes[self.problem.mode_index(m)]

    @property
    def projection(self) -> Dict[str, str]:
        """π: mode name → name of the mode whose uncontrolled diffusion it shares."""
        return {md.name: md.representative for md in self.modes}

    @property
    def representatives(self) -> List[str]:
        """ℳ̄, in mode order."""
        seen: List[str] = []
        for md in self.modes:
            if md.representative not in seen:
                seen.append(md.representative)
        return seen

    def members(self, representative: str) -> List[int]:
        """Indices of the modes m̄ with π(m̄) = representative."""
        return [i for i, md in enumerate(self.modes) if md.representative == representative]


def _projection_classes(prob: ControlProblem) -> Dict[str, List[ModeCoefficients]]:
    classes: Dict[str, List[ModeCoefficients]] = {}
    by_name = {mode.name: mode for mode in prob.modes}
    for mode in prob.modes:
        target = mode.projection or mode.name
        if (by_name[target].projection or target) != target:
            raise ConfigurationError(
                f"mode {mode.name!r} projects onto {target!r}, which projects elsewhere"
            )
        classes.setdefault(target, []).append(mode)
    return classes


def default_underlying(prob: ControlProblem, modes: List[ModeCoefficients]) -> Underlying:
    """σ̲ = 0.99·ε_a·I with ε_a² the smallest eigenvalue of σσᵀ over the modes, f̲ = 0."""
    d = prob.dim_x
    smallest = min(float(np.linalg.eigvalsh(mode.sigma @ mode.sigma.T)[0]) for mode in modes)
    if smallest <= 0:
        names = ", ".join(mode.name for mode in modes)
        raise FactorizationError(
            f"σσᵀ is singular for mode(s) {names}; configure an explicit underlying diffusion"
        )
    eps = DEFAULT_SHRINK * math.sqrt(smallest)
    return Underlying(A=np.zeros((d, d)), f0=np.zeros(d), sigma=eps * np.eye(d))


def _class_underlying(
    prob: ControlProblem, representative: str, modes: List[ModeCoefficients]
) -> Underlying:
    explicit = [mode.underlying for mode in modes if mode.underlying is not None]
    if not explicit:
        return default_underlying(prob, modes)
    chosen = explicit[0]
    for other in explicit[1:]:
        same = (
            np.allclose(other.A, chosen.A)
            and np.allclose(other.f0, chosen.f0)
            and np.allclose(other.sigma, chosen.sigma)
        )
        if not same:
            raise ConfigurationError(
                f"modes projected onto {representative!r} declare different underlying diffusions"
            )
    return chosen


def _loewner_check(prob: ControlProblem, mode: ModeCoefficients, a: np.ndarray) -> None:
    x = prob.audit_points()[:, None, :]
    cov = mode.covariance(x, prob.controls[None, :, :])
    eigs = np.linalg.eigvalsh(cov - a)[..., 0]
    worst = np.unravel_index(int(np.argmin(eigs)), eigs.shape)
    if eigs[worst] < -LOEWNER_TOLERANCE:
        raise DecompositionError(
            mode.name, x[worst[0], 0], prob.controls[worst[1]], float(eigs[worst])
        )


def build_decomposition(
    prob: ControlProblem, underlying: Optional[Mapping[str, Underlying]] = None
) -> Decomposition:
    """
    Decompose every mode.

    `underlying` overrides the uncontrolled diffusion per projection class, keyed by the
    representative mode name; otherwise the config or the default choice is used.
    """
    overrides = dict(underlying or {})
    by_mode: Dict[str, ModeDecomposition] = {}
    for representative, modes in _projection_classes(prob).items():
        chosen = overrides.get(representative) or _class_underlying(prob, representative, modes)
        if np.linalg.matrix_rank(chosen.sigma) < prob.dim_x:
            raise FactorizationError(f"underlying σ̲ of {representative!r} is singular")
        sigma_inv = np.linalg.inv(chosen.sigma)
        a = chosen.sigma @ chosen.sigma.T
        for mode in modes:
            _loewner_check(prob, mode, a)
            residual = sigma_inv @ (mode.sigma @ mode.sigma.T - a) @ sigma_inv.T
            Sigma = pivoted_cholesky(0.5 * (residual + residual.T))
            by_mode[mode.name] = ModeDecomposition(
                mode=mode,
                underlying=chosen,
                sigma_inv=sigma_inv,
                Sigma=Sigma,
                representative=representative,
            )

    modes = tuple(by_mode[mode.name] for mode in prob.modes)
    a_bar = A_BAR_HEADROOM * max(md.trace for md in modes)
    for md in modes:
        logger.info(f"{prob.name}/{md.name}: rank Σ = {md.rank}, tr(ΣΣᵀ) = {md.trace:.6g}")
    return Decomposition(problem=prob, modes=modes, a_bar=a_bar)


def min_k(decomp) -> int:
    """Smallest k ≥ 0 with a_bar ≤ 4k + 2; accepts a Decomposition or a number."""
    a_bar = decomp.a_bar if isinstance(decomp, Decomposition) else float(decomp)
    if not math.isfinite(a_bar):
        raise ConfigurationError("a_bar must be finite")
    return max(0, math.ceil((a_bar - 2.0) / 4.0))


def _check_dim(decomp: Decomposition, *arrays: np.ndarray) -> None:
    d = decomp.problem.dim_x
    for arr in arrays:
        if arr.shape[0] != d:
            raise ConfigurationError(f"expected dimension {d}, got shape {arr.shape}")


def linear_part(decomp: Decomposition, m: ModeRef, x, p, Gamma) -> float:
    """ℒ^m(x,p,Γ) = f̲·p + ½tr(aΓ)."""
    md = decomp.mode(m)
    x, p, Gamma = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, p, Gamma))
    Gamma = np.atleast_2d(Gamma)
    _check_dim(decomp, x, p, Gamma)
    return float(md.underlying_drift(x) @ p + 0.5 * np.trace(md.a @ Gamma))


def g1_value(decomp: Decomposition, m: ModeRef, x, p, u) -> float:
    """𝒢^m_1 = (σ̲g)·p."""
    md = decomp.mode(m)
    x, p = np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(p, dtype=float))
    _check_dim(decomp, x, p)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float((md.sigma_bar @ md.g(x, u)) @ p)


def g2_value(decomp: Decomposition, m: ModeRef, x, Gamma, u) -> float:
    """𝒢^m_2 = ½tr(σ̲ΣΣᵀσ̲ᵀΓ)."""
    md = decomp.mode(m)
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    _check_dim(decomp, np.atleast_1d(np.asarray(x, dtype=float)), Gamma)
    if md.rank == 0:
        return 0.0
    s = md.sigma_bar @ md.residual_factor(x, u)
    return float(0.5 * np.trace(s @ s.T @ Gamma))

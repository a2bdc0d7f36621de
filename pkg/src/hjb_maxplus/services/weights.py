"""
Weight polynomials multiplying the simulated payoff.

All functions broadcast over leading axes of `w`, so a whole table of increments can be
weighted at once.
"""
import math
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.special import factorial2

from ..exceptions import ConfigurationError, FactorizationError

MAX_K = 7
ZERO_COLUMN = 1e-300


def gaussian_moment(n: int) -> int:
    """𝔼[N^n] for a standard normal N."""
    if n < 0:
        raise ValueError("moment order must be nonnegative")
    if n % 2:
        return 0
    return int(factorial2(n - 1, exact=True)) if n else 1


@lru_cache(maxsize=None)
def ck_dk(k: int) -> Tuple[float, float]:
    """c_k = 1/((4k+2)·(4k+1)!!) and d_k = 1/(4k+2)."""
    if not 0 <= k <= MAX_K:
        raise ConfigurationError(f"k must lie in [0, {MAX_K}], got {k}")
    n = 4 * k + 2
    return 1.0 / (n * gaussian_moment(n)), 1.0 / n


def poly2_eval(Sigma, k: int, w) -> np.ndarray:
    """𝒫²_{Σ,k}(w) = Σ_j ‖Σ_j‖²(c_k([Σᵀw]_j/‖Σ_j‖)^{4k+2} − d_k); zero columns contribute 0."""
    c, d = ck_dk(k)
    Sigma = np.asarray(Sigma, dtype=float)
    w = np.asarray(w, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[1] == 0:
        return np.zeros(w.shape[:-1])
    norms = np.linalg.norm(Sigma, axis=0)
    live = norms >= ZERO_COLUMN
    if not np.any(live):
        return np.zeros(w.shape[:-1])
    S, norms = Sigma[:, live], norms[live]
    projected = (w @ S) / norms
    return np.sum(norms**2 * (c * projected ** (4 * k + 2) - d), axis=-1)


def poly2_lower_bound(Sigma, k: int) -> float:
    """−tr(ΣΣᵀ)/(4k+2), attained where Σᵀw = 0."""
    return -float(np.sum(np.asarray(Sigma, dtype=float) ** 2)) * ck_dk(k)[1]


def upwind1_eval(g, w) -> np.ndarray:
    """𝒫¹_g(w) = 2(g₊·w₊ + g₋·w₋), nonnegative."""
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    return 2.0 * (
        np.sum(np.maximum(g, 0.0) * np.maximum(w, 0.0), axis=-1)
        + np.sum(np.maximum(-g, 0.0) * np.maximum(-w, 0.0), axis=-1)
    )


def expected_upwind1(g, h: float) -> np.ndarray:
    """𝔼[𝒫¹_g(W/h)] = √(2/(πh))·Σ|g_i| for W ~ N(0, hI)."""
    return math.sqrt(2.0 / (math.pi * h)) * np.sum(np.abs(np.asarray(g, dtype=float)), axis=-1)


def _inverse(sigma_bar) -> np.ndarray:
    sigma_bar = np.atleast_2d(np.asarray(sigma_bar, dtype=float))
    try:
        inv = np.linalg.inv(sigma_bar)
    except np.linalg.LinAlgError:
        raise FactorizationError("underlying diffusion factor σ̲ is singular") from None
    if not np.all(np.isfinite(inv)):
        raise FactorizationError("underlying diffusion factor σ̲ is singular")
    return inv


def ftw_eval(i: int, sigma_bar, h: float, w) -> np.ndarray:
    """
    Weights of the derivative estimators on an increment w ~ N(0, hI).

    i = 0 gives 1, i = 1 the vector σ̲⁻ᵀw/h, i = 2 the matrix σ̲⁻ᵀ(wwᵀ − hI)σ̲⁻¹/h².
    """
    w = np.asarray(w, dtype=float)
    if i == 0:
        return np.ones(w.shape[:-1])
    inv = _inverse(sigma_bar)
    if i == 1:
        return (w @ inv) / h
    if i == 2:
        d = w.shape[-1]
        outer = w[..., :, None] * w[..., None, :] - h * np.eye(d)
        return np.einsum("ji,...jk,kl->...il", inv, outer, inv) / h**2
    raise ConfigurationError(f"FTW weight order must be 0, 1 or 2, got {i}")


def composite_weight(decomp, m, u, x, h: float, k: int, w_scaled) -> np.ndarray:
    """
    Total multiplier 1 + h𝒫¹_g(h^{-1/2}w) + 𝒫²_{Σ,k}(w) of the simulated payoff.

    `w_scaled` is the Brownian increment divided by √h.
    """
    md = decomp.mode(m)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = np.asarray(w_scaled, dtype=float)
    g = md.g(x, u)
    return 1.0 + h * upwind1_eval(g, w / math.sqrt(h)) + poly2_eval(md.residual_factor(x, u), k, w)

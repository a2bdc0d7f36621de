"""
Built-in control problems.

Each entry is a JSON-compatible document validated by `ProblemConfig`. Matrices are
row-major. The running reward is
ℓ(x,u) = ½xᵀ Lxx x + xᵀ Lxu u + ½uᵀ Luu u + lx·x + lu·u + l0,
and the terminal reward is the max of the listed concave quadratic forms.
"""

LQ1D = {
    "name": "lq1d",
    "description": "dξ = u ds + dW, ℓ = −x² − u², ψ = −x²; exact v = −x² − (T − t)",
    "d": 1,
    "T": 1.0,
    "modes": [
        {
            "name": "lq",
            "A": [0.0],
            "B": [1.0],
            "sigma": [1.0],
            "delta": 0.0,
            "Lxx": [-2.0],
            "Luu": [-2.0],
        }
    ],
    "controls": [{"min": -10.0, "max": 10.0, "count": 201}],
    "terminal_forms": [{"Q": [-2.0], "b": [0.0], "c": 0.0}],
    "bounds": {"f_sup": 10.0, "sigma_sup": 1.0, "ell_sup": 104.0, "delta_inf": 0.0},
    "seed": 20170101,
}

LQ1D_HALF = {
    **LQ1D,
    "name": "lq1d_half",
    "description": "lq1d with ψ = −½x²; P(t) = −2 tanh((T − t) + artanh ½)",
    "terminal_forms": [{"Q": [-1.0], "b": [0.0], "c": 0.0}],
}

LQ2D = {
    "name": "lq2d",
    "description": "2-d LQ with correlated constant diffusion, ℓ = −|x|² − |u|², ψ = −|x|²",
    "d": 2,
    "T": 1.0,
    "modes": [
        {
            "name": "lq",
            "A": [[0.0, 0.5], [0.0, 0.0]],
            "B": [[1.0, 0.0], [0.0, 1.0]],
            "sigma": [[1.0, 0.0], [0.3, 0.8]],
            "delta": 0.0,
            "Lxx": [[-2.0, 0.0], [0.0, -2.0]],
            "Luu": [[-2.0, 0.0], [0.0, -2.0]],
        }
    ],
    "controls": [
        {"min": -4.0, "max": 4.0, "count": 17},
        {"min": -4.0, "max": 4.0, "count": 17},
    ],
    "terminal_forms": [{"Q": [[-2.0, 0.0], [0.0, -2.0]], "b": [0.0, 0.0], "c": 0.0}],
    "bounds": {"f_sup": 6.0, "sigma_sup": 1.1, "ell_sup": 40.0, "delta_inf": 0.0},
    "seed": 20170102,
}

SWITCHING = {
    "name": "switching",
    "description": "two regimes with different constant volatilities and rewards",
    "d": 1,
    "T": 1.0,
    "modes": [
        {
            "name": "calm",
            "B": [1.0],
            "sigma": [1.0],
            "Lxx": [-2.0],
            "Luu": [-2.0],
        },
        {
            "name": "volatile",
            "B": [1.0],
            "sigma": [2.0],
            "Lxx": [-2.0],
            "Luu": [-2.0],
            "lx": [2.0],
            "l0": -0.5,
        },
    ],
    "controls": [{"min": -5.0, "max": 5.0, "count": 51}],
    "terminal_forms": [
        {"Q": [-2.0], "b": [0.0], "c": 0.0},
        {"Q": [-2.0], "b": [2.0], "c": -1.25},
    ],
    "bounds": {"f_sup": 5.0, "sigma_sup": 2.0, "ell_sup": 40.0, "delta_inf": 0.0},
    "seed": 20170103,
}

DEGENERATE = {
    "name": "degenerate",
    "description": (
        "shared underlying σ̲ = I; residual diffusion rank 1 or 0, "
        "controlled drift in both directions"
    ),
    "d": 2,
    "T": 1.0,
    "modes": [
        {
            "name": "diffuse",
            "B": [[1.0, 0.0], [0.0, 1.0]],
            "sigma": [[1.7320508075688772, 0.0], [0.0, 1.0]],
            "Lxx": [[-2.0, 0.0], [0.0, -2.0]],
            "Luu": [[-2.0, 0.0], [0.0, -2.0]],
            "underlying": {"sigma": [[1.0, 0.0], [0.0, 1.0]]},
        },
        {
            "name": "flat",
            "B": [[1.0, 0.0], [0.0, 1.0]],
            "sigma": [[1.0, 0.0], [0.0, 1.0]],
            "Lxx": [[-2.0, 0.0], [0.0, -2.0]],
            "Luu": [[-2.0, 0.0], [0.0, -2.0]],
            "l0": 0.25,
            "underlying": {"sigma": [[1.0, 0.0], [0.0, 1.0]]},
            "projection": "diffuse",
        },
    ],
    "controls": [
        {"min": -2.0, "max": 2.0, "count": 9},
        {"min": -2.0, "max": 2.0, "count": 9},
    ],
    "terminal_forms": [{"Q": [[-2.0, 0.0], [0.0, -2.0]], "b": [0.0, 0.0], "c": 0.0}],
    "bounds": {"f_sup": 2.0, "sigma_sup": 1.8, "ell_sup": 20.0, "delta_inf": 0.0},
    "seed": 20170104,
}

FTW_CRITICAL = {
    "name": "ftw_critical",
    "description": "σσᵀ = 5 over a = 1: violates tr(a⁻¹∂Γ𝒢) ≤ 1, breaking the FTW weights",
    "d": 1,
    "T": 1.0,
    "modes": [
        {
            "name": "wide",
            "B": [0.0],
            "sigma": [2.23606797749979],
            "Lxx": [-2.0],
            "underlying": {"sigma": [1.0]},
        }
    ],
    "controls": [{"min": 0.0, "max": 0.0, "count": 1}],
    "terminal_forms": [{"Q": [-2.0], "b": [0.0], "c": 0.0}],
    "bounds": {"f_sup": 0.0, "sigma_sup": 2.3, "ell_sup": 4.0, "delta_inf": 0.0},
}

GROWTH = {
    "name": "growth",
    "description": "negative discount δ = −1 (λ = 1) with bounded rewards",
    "d": 1,
    "T": 1.0,
    "modes": [
        {
            "name": "grow",
            "B": [1.0],
            "sigma": [1.0],
            "delta": -1.0,
            "Luu": [-2.0],
            "l0": 0.5,
        }
    ],
    "controls": [{"min": -1.0, "max": 1.0, "count": 5}],
    "terminal_forms": [{"Q": [0.0], "b": [0.0], "c": 1.0}],
    "bounds": {"f_sup": 1.0, "sigma_sup": 1.0, "ell_sup": 1.0, "delta_inf": -1.0},
}

BUILTIN_PROBLEMS = {
    doc["name"]: doc
    for doc in (LQ1D, LQ1D_HALF, LQ2D, SWITCHING, DEGENERATE, FTW_CRITICAL, GROWTH)
}

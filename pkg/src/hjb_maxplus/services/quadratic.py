from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np


@dataclass(frozen=True)
class QuadraticForm:
    """q(x) = ½xᵀQx + b·x + c with Q symmetric."""

    Q: np.ndarray
    b: np.ndarray
    c: float
    omega: Optional[int] = None
    mode: Optional[str] = None
    residual: float = field(default=0.0, compare=False)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        object.__setattr__(self, "c", float(self.c))
        if self.Q.shape != (self.dim, self.dim):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(self.dim, self.dim)}")

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def __call__(self, x) -> np.ndarray:
        """Evaluate at x of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.Q, x) + x @ self.b + self.c

    def gradient(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.Q + self.b

    def max_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[-1])

    def is_nsd(self, tol: float = 1e-9) -> bool:
        return self.max_eigenvalue() <= tol

    def to_dict(self) -> Dict[str, Any]:
        return {
            "Q": [float(v) for v in self.Q.ravel()],
            "b": [float(v) for v in self.b],
            "c": self.c,
            "omega": self.omega,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuadraticForm":
        b = np.asarray(data["b"], dtype=float)
        d = b.shape[0]
        return cls(
            Q=np.asarray(data["Q"], dtype=float).reshape(d, d),
            b=b,
            c=data.get("c", 0.0),
            omega=data.get("omega"),
            mode=data.get("mode"),
        )


def max_of_forms(forms, x) -> np.ndarray:
    """Pointwise max over a non-empty collection of forms, x of shape (..., d)."""
    return np.max(np.stack([form(x) for form in forms], axis=0), axis=0)

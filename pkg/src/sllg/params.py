"""Model parameters: damping constants and the anisotropy g'(x) = A x + b."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AnisotropyParams:
    """Damping/precession constants and the linear anisotropy map.

    ``lam1`` multiplies the precession terms, ``lam2 > 0`` the damping terms.
    The anisotropy enters the drift through g'(u) = A u + b.
    """

    lam1: float = 0.0
    lam2: float = 1.0
    A: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    b: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float).reshape(3, 3))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(3))
        if not self.lam2 > 0:
            raise ValueError(f"lam2 must be positive, got {self.lam2}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("anisotropy coefficients must be finite")

    @property
    def gbar(self) -> float:
        """Smallness functional 2 sup_ij |A_ij|^2 + |b|."""
        return 2.0 * float(np.max(np.abs(self.A)) ** 2) + float(np.linalg.norm(self.b))

    @property
    def sym_A(self) -> np.ndarray:
        """Symmetric part of A; the energy quadratic form uses this."""
        return 0.5 * (self.A + self.A.T)

    def gprime(self, v: np.ndarray) -> np.ndarray:
        """Evaluate g'(v) = A v + b; vectorized over leading axes of ``v``."""
        v = np.asarray(v, dtype=float)
        return v @ self.A.T + self.b

    def is_zero(self) -> bool:
        return not (np.any(self.A) or np.any(self.b))

"""Smooth approximations of the step function ``I(u > 0)``."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, ndtr


class SurrogateKind(str, Enum):
    DRELU = "drelu"
    SIGMOID = "sigmoid"
    GAUSSCDF = "gausscdf"
    EXACT = "exact"


class NonDifferentiableError(ValueError):
    pass


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Surrogate:
    """Indicator approximation ``S_omega`` with bandwidth ``omega``.

    ``omega`` is ignored for the exact indicator.
    """

    kind: SurrogateKind = SurrogateKind.DRELU
    omega: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SurrogateKind(self.kind))
        if self.kind is not SurrogateKind.EXACT and not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")

    def with_omega(self, omega: float) -> "Surrogate":
        return Surrogate(self.kind, float(omega))

    def eval(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind is SurrogateKind.EXACT:
            return (u > 0).astype(np.float64)
        t = u / self.omega
        if self.kind is SurrogateKind.DRELU:
            # relu(t + 1/2) - relu(t - 1/2) == clip(t + 1/2, 0, 1); the clipped
            # form is exactly 0 or 1 outside the ramp, the difference is not
            return np.clip(t + 0.5, 0.0, 1.0)
        if self.kind is SurrogateKind.SIGMOID:
            return expit(t)
        return ndtr(t)

    def grad(self, u):
        """Derivative of :meth:`eval` in ``u`` (0 at the DReLU kinks)."""
        u = np.asarray(u, dtype=np.float64)
        if self.kind is SurrogateKind.EXACT:
            raise NonDifferentiableError("non-differentiable surrogate: exact indicator has no gradient")
        t = u / self.omega
        if self.kind is SurrogateKind.DRELU:
            return (np.abs(t) < 0.5) / self.omega
        if self.kind is SurrogateKind.SIGMOID:
            s = expit(t)
            return s * (1.0 - s) / self.omega
        return _INV_SQRT_2PI * np.exp(-0.5 * t * t) / self.omega


EXACT = Surrogate(SurrogateKind.EXACT)

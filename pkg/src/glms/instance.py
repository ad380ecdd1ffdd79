"""GLM problem instances ``F(x) = sum_i c_i f_i(<a_i, x> - b_i)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import as_row_matrix
from .losses import LossFamily

__all__ = ["ProblemInstance", "lift_shift"]


@dataclass
class ProblemInstance:
    A: np.ndarray
    family: LossFamily
    b: np.ndarray | None = None
    multipliers: np.ndarray | None = None

    def __post_init__(self):
        self.A = as_row_matrix(self.A, allow_zero_rows=False)
        m = self.A.shape[0]
        if self.b is None:
            self.b = np.zeros(m)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.b.shape != (m,):
            raise ConfigError(f"shift has length {self.b.size}, expected {m}")
        if not np.all(np.isfinite(self.b)):
            raise ConfigError("shift entries must be finite")
        if self.multipliers is None:
            self.multipliers = np.ones(m)
        self.multipliers = np.asarray(self.multipliers, dtype=float)
        if self.multipliers.shape != (m,) or np.any(self.multipliers < 0):
            raise ConfigError("multipliers must be a non-negative vector of length m")
        nt = self.family.n_terms
        if nt is not None and nt != m:
            raise ConfigError(f"loss has {nt} per-term parameters, matrix has {m} rows")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def shifted(self) -> bool:
        return bool(np.any(self.b != 0))

    def residuals(self, x):
        return self.A @ np.asarray(x, dtype=float) - self.b

    def terms(self, x):
        """Per-term values ``c_i f_i(<a_i, x> - b_i)``; ``x`` may be ``n`` or ``n x k``."""
        x = np.asarray(x, dtype=float)
        r = self.A @ x - (self.b if x.ndim == 1 else self.b[:, None])
        c = self.multipliers if x.ndim == 1 else self.multipliers[:, None]
        if x.ndim == 1:
            return c * self.family.value(r)
        return c * self.family.value(r.T).T

    def value(self, x):
        return self.terms(x).sum(axis=0)

    def gradient(self, x):
        r = self.residuals(x)
        return self.A.T @ (self.multipliers * self.family.deriv(r))

    def subset(self, idx, weights=None) -> "ProblemInstance":
        """Sub-instance on rows ``idx`` with multipliers ``c_idx * weights``."""
        idx = np.asarray(idx, dtype=int)
        c = self.multipliers[idx]
        if weights is not None:
            c = c * np.asarray(weights, dtype=float)
        return ProblemInstance(self.A[idx], self.family.take(idx), self.b[idx], c)


def lift_shift(instance: ProblemInstance) -> ProblemInstance:
    """Homogenize: rows ``(a_i, b_i)`` so that the value at ``(x, -1)`` equals ``F(x)``."""
    A = np.hstack([instance.A, instance.b[:, None]])
    return ProblemInstance(A, instance.family, None, instance.multipliers)

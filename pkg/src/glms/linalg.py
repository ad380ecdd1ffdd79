"""Gram matrices, exact leverage scores and sketched leverage estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import make_rng, map_rows
from .errors import ConfigError, InconsistencyError

__all__ = [
    "as_row_matrix",
    "GramFactorization",
    "gram",
    "leverage_exact",
    "leverage_sketch",
    "leverage",
    "sketch_size",
    "log_ratio_distance",
]

RANK_RTOL = 1e-12


def as_row_matrix(A, allow_zero_rows: bool = True) -> np.ndarray:
    """Validate a dense ``m x n`` row matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ConfigError(f"expected a non-empty 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ConfigError("matrix entries must be finite")
    if not allow_zero_rows:
        zero = np.flatnonzero(~np.any(A != 0, axis=1))
        if zero.size:
            raise ConfigError(f"zero rows are not allowed (first at index {zero[0]})")
    return np.ascontiguousarray(A)


def _weights(w, m):
    w = np.asarray(w, dtype=float)
    if w.shape != (m,):
        raise ConfigError(f"weight vector must have length {m}, got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("weights must be finite and non-negative")
    return w


@dataclass
class GramFactorization:
    """``M_w = A^T W A`` with a thin eigen-factorization ``M = V diag(lam) V^T``.

    The factor comes from the SVD of ``W^{1/2} A``; eigenvalues below
    ``1e-12 * lam_max`` (in singular-value terms) are dropped.
    """

    M: np.ndarray
    V: np.ndarray  # n x r
    sing: np.ndarray  # r singular values of W^{1/2} A

    @property
    def rank(self) -> int:
        return int(self.sing.size)

    @property
    def eigvals(self):
        return self.sing**2

    def reconstruct(self):
        return (self.V * self.eigvals) @ self.V.T

    def pinv(self):
        return (self.V / self.eigvals) @ self.V.T

    def inv_sqrt(self):
        """``(M^+)^{1/2}`` restricted to the range, as an ``n x r`` map ``V diag(1/sigma)``."""
        return self.V / self.sing

    def solve(self, rhs):
        return self.V @ ((self.V.T @ rhs) / (self.eigvals if np.ndim(rhs) == 1
                                             else self.eigvals[:, None]))

    def quad_inv(self, A):
        """Rowwise ``a_i^T M^+ a_i``."""
        A = np.asarray(A, dtype=float)
        P = self.inv_sqrt()
        return map_rows(lambda s: np.einsum("ij,ij->i", A[s] @ P, A[s] @ P), A.shape[0])

    def range_residual(self, A):
        """Rowwise relative norm of the component of ``a_i`` outside range(M)."""
        A = np.asarray(A, dtype=float)
        proj = (A @ self.V) @ self.V.T
        num = np.linalg.norm(A - proj, axis=1)
        den = np.maximum(np.linalg.norm(A, axis=1), np.finfo(float).tiny)
        return num / den


def gram(A, w) -> GramFactorization:
    """Factor ``sum_i w_i a_i a_i^T``."""
    A = as_row_matrix(A)
    w = _weights(w, A.shape[0])
    M = A.T @ (w[:, None] * A)
    keep = w > 0
    B = np.sqrt(w[keep])[:, None] * A[keep]
    n = A.shape[1]
    if B.shape[0] == 0:
        return GramFactorization(M, np.zeros((n, 0)), np.zeros(0))
    _, s, Vt = np.linalg.svd(B, full_matrices=False)
    r = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    return GramFactorization(M, Vt[:r].T.copy(), s[:r].copy())


def leverage_exact(A, w, fact: GramFactorization | None = None):
    """Exact ``(sigma, tau)``: ``tau_i = a_i^T M_w^+ a_i`` and ``sigma_i = w_i tau_i``."""
    A = as_row_matrix(A)
    w = _weights(w, A.shape[0])
    if fact is None:
        fact = gram(A, w)
    tau = fact.quad_inv(A)
    pos = w > 0
    if fact.rank < A.shape[1] and np.any(pos):
        res = fact.range_residual(A[pos])
        if np.any(res > 1e-6):
            raise InconsistencyError("a positively weighted row lies outside range(M_w)")
    sigma = w * tau
    return np.clip(sigma, 0.0, 1.0), tau


def sketch_size(eps: float, m: int, delta_fail: float = 1e-6) -> int:
    return int(math.ceil(40.0 * eps**-2 * math.log(max(m, 2) / delta_fail)))


def leverage_sketch(A, w, eps: float, seed: int, delta_fail: float = 1e-6,
                    fact: GramFactorization | None = None):
    """Gaussian-sketch estimates of ``sigma_i`` with relative accuracy ``1 + eps``.

    The rows ``y_i = sqrt(w_i) (M_w^+)^{1/2} a_i`` are sketched with a
    ``k x r`` Gaussian ``G``; ``|G y_i|^2 / k = y_i^T (G^T G / k) y_i``.
    """
    if not (0.0 < eps <= 1.0 / 3.0):
        raise ConfigError(f"sketch accuracy must lie in (0, 1/3], got {eps}")
    A = as_row_matrix(A)
    w = _weights(w, A.shape[0])
    if fact is None:
        fact = gram(A, w)
    m = A.shape[0]
    k = sketch_size(eps, m, delta_fail)
    r = fact.rank
    rng = make_rng(seed, "leverage-sketch")
    G = rng.standard_normal((k, r))
    Q = (G.T @ G) / k
    P = fact.inv_sqrt() @ np.linalg.cholesky(Q) if r else fact.inv_sqrt()
    est = map_rows(lambda s: np.einsum("ij,ij->i", A[s] @ P, A[s] @ P), m)
    return w * est


def leverage(A, w, eps: float = 0.0, seed: int = 0, method: str = "auto"):
    """Leverage scores ``sigma`` by the exact or sketched path.

    ``method='auto'`` takes the exact path when ``eps == 0``, ``m <= 4n``
    or ``m <= 256``.
    """
    A = as_row_matrix(A)
    m, n = A.shape
    if method not in ("auto", "exact", "sketch"):
        raise ConfigError(f"unknown leverage method {method!r}")
    exact = method == "exact" or eps == 0 or (method == "auto" and (m <= 4 * n or m <= 256))
    if exact:
        return leverage_exact(A, w)[0]
    return leverage_sketch(A, w, min(eps, 1.0 / 3.0), seed)


def log_ratio_distance(u, w) -> float:
    """``max_i |log(u_i / w_i)|``; infinite when the zero patterns differ."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    zu, zw = u == 0, w == 0
    if np.any(zu != zw):
        return math.inf
    nz = ~zu
    if not np.any(nz):
        return 0.0
    return float(np.max(np.abs(np.log(u[nz]) - np.log(w[nz]))))

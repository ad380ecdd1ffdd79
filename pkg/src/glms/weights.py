"""Approximate weights and multiscale weight schemes.

At scale ``s`` a weight vector ``w`` is ``alpha``-approximate when
``f_i(sqrt(tau_i)) / (w_i tau_i)`` lies in ``[s/alpha, alpha s]`` for all
``i``, where ``tau_i = a_i^T M_w^+ a_i``.  Equivalently
``d(w, phi_s(w)) <= log(alpha)`` with

    phi_s(w)_i = f_i(sqrt(tau_i)) / (s tau_i).

``phi_s`` is a contraction in the log-ratio metric with factor
``max(|theta/2 - 1|, |u/2 - 1|)`` up to an additive constant, so iterating
it from any start converges to an approximate fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AuditFailure,
    ConfigError,
    DegenerateLossError,
    NoContractionError,
    ThresholdNotAttainedError,
)
from .linalg import as_row_matrix, leverage, leverage_exact, log_ratio_distance
from .losses import LossFamily, PerturbedLoss

__all__ = [
    "phi",
    "contraction_factor",
    "warmup_iterations",
    "alpha_bound",
    "WeightScheme",
    "find_weights",
    "audit_scheme",
    "initial_weights",
    "log_ratio_distance",
]


def _tau(A, w, eps, seed):
    if eps == 0:
        return leverage_exact(A, w)[1]
    return leverage(A, w, eps=eps, seed=seed) / w


def phi(A, family: LossFamily, w, s: float, eps: float = 0.0, seed: int = 0,
        multipliers=None):
    """One step of the weight iteration at scale ``s``.

    ``eps > 0`` uses sketched leverage scores (exact for small inputs).
    ``multipliers`` rescale the losses, ``f_i -> c_i f_i``.
    """
    A = as_row_matrix(A)
    w = np.asarray(w, dtype=float)
    if w.shape != (A.shape[0],) or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ConfigError("weights must be a finite positive vector of length m")
    if not s > 0:
        raise ConfigError(f"scale must be positive, got {s}")
    if not (0.0 <= eps < 1.0 / 3.0 + 1e-12):
        raise ConfigError(f"leverage accuracy must lie in [0, 1/3), got {eps}")
    tau = _tau(A, w, eps, seed)
    fv = family.value(np.sqrt(tau))
    if multipliers is not None:
        fv = np.asarray(multipliers, dtype=float) * fv
    bad = (fv <= 0) & (tau > 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateLossError(f"f_{i} vanishes at the positive argument {math.sqrt(tau[i])}")
    return fv / (s * tau)


def _h_constants(family):
    k = family.constants
    return k.theta, k.u, k.c, k.C


def contraction_factor(family: LossFamily) -> float:
    theta, u, _, _ = _h_constants(family)
    return max(abs(theta / 2.0 - 1.0), abs(u / 2.0 - 1.0))


def warmup_iterations(family: LossFamily, beta: float) -> int:
    """Warm-up count ``T`` of the weight search (at least one)."""
    theta, u, c, C = _h_constants(family)
    delta = contraction_factor(family)
    if delta >= 1.0:
        raise NoContractionError(
            f"contraction factor {delta:.3g} >= 1 (theta={theta}, u={u})")
    if delta == 0.0:
        return 1
    num = math.log((1.0 + beta) / math.log(max(2.0 * C, 2.0 / c)))
    den = math.log(1.0 / delta)  # = log min(|2/(theta-2)|, |2/(u-2)|)
    return max(1, int(math.ceil(num / den)))


def alpha_bound(family: LossFamily) -> float:
    """Largest admissible scheme ``alpha`` (with 1% numerical slack)."""
    _, _, c, C = _h_constants(family)
    delta = contraction_factor(family)
    C1 = max(C, 1.0 / c)
    return math.exp((2.0 * math.log(2.0 * C1) + math.log(2.0)) / (1.0 - delta)) * 1.01


@dataclass
class WeightScheme:
    """Weights ``w^(j)`` for the dyadic scales ``2^j``, ``jmin <= j <= jmax``.

    ``weights[k]`` belongs to ``j = jmin + k``.  ``scores`` holds
    ``max_j sigma_i(W_j^{1/2} A)``.
    """

    jmin: int
    jmax: int
    alpha: float
    weights: np.ndarray
    scores: np.ndarray
    fixed_point_dist: np.ndarray = field(default=None)
    smooth_ratio: float = 0.0
    warmup: int = 0
    beta: float = 0.0

    @property
    def scales(self):
        return list(range(self.jmin, self.jmax + 1))

    def weight(self, j: int) -> np.ndarray:
        if not self.jmin <= j <= self.jmax:
            raise KeyError(j)
        return self.weights[j - self.jmin]

    @property
    def tau_l1(self) -> float:
        return float(np.sum(self.scores))

    def to_dict(self) -> dict:
        return {
            "jmin": int(self.jmin),
            "jmax": int(self.jmax),
            "alpha": float(self.alpha),
            "weights": [[float(v) for v in row] for row in self.weights],
            "scores": [float(v) for v in self.scores],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightScheme":
        try:
            return cls(int(d["jmin"]), int(d["jmax"]), float(d["alpha"]),
                       np.asarray(d["weights"], dtype=float),
                       np.asarray(d["scores"], dtype=float))
        except KeyError as exc:
            raise ConfigError(f"weight scheme JSON lacks field {exc}") from None


def _polish(A, family, w, s, tol, max_iter, multipliers):
    """Exact iterations at a fixed scale until ``d(w, phi(w)) <= tol``."""
    dist = math.inf
    for _ in range(max_iter):
        nw = phi(A, family, w, s, 0.0, multipliers=multipliers)
        dist = log_ratio_distance(nw, w)
        w = nw
        if dist <= tol:
            break
    return w


def audit_scheme(A, family, scheme_weights, jmin, multipliers=None):
    """Exact per-scale fixed-point distances, adjacent-scale ratio and scores."""
    A = as_row_matrix(A)
    dists, scores = [], np.zeros(A.shape[0])
    for k, w in enumerate(scheme_weights):
        s = 2.0 ** (jmin + k)
        sigma, tau = leverage_exact(A, w)
        fv = family.value(np.sqrt(tau))
        if multipliers is not None:
            fv = multipliers * fv
        dists.append(log_ratio_distance(fv / (s * tau), w))
        scores = np.maximum(scores, sigma)
    W = np.asarray(scheme_weights)
    smooth = float(np.max(W[1:] / W[:-1])) if len(W) > 1 else 0.0
    return np.asarray(dists), smooth, scores


def find_weights(A, family: LossFamily, jmin: int, jmax: int, w0, beta: float | None = None,
                 eps: float = 0.1, seed: int = 0, tol: float = 1e-10, max_polish: int = 500,
                 multipliers=None) -> WeightScheme:
    """Multiscale weight scheme by warm-up at ``2^jmax`` and a downward sweep.

    Each scale is polished with exact iterations until the fixed-point
    distance drops below ``tol`` (or ``max_polish`` steps), then the whole
    scheme is audited with exact leverage scores.
    """
    A = as_row_matrix(A)
    if jmin > jmax:
        raise ConfigError(f"empty scale range [{jmin}, {jmax}]")
    if multipliers is not None:
        multipliers = np.asarray(multipliers, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    smax = 2.0**jmax
    measured = log_ratio_distance(phi(A, family, w0, smax, multipliers=multipliers), w0)
    beta_eff = measured if beta is None else max(beta, measured)
    T = warmup_iterations(family, beta_eff)

    w = w0
    for t in range(T + 1):
        w = phi(A, family, w, smax, eps, seed=seed * 1000003 + t,
                multipliers=multipliers)
    weights = [None] * (jmax - jmin + 1)
    prev = w
    for j in range(jmax, jmin - 1, -1):
        s = 2.0**j
        cur = phi(A, family, prev, s, eps, seed=seed * 1000003 + 1000 + j - jmin,
                  multipliers=multipliers)
        cur = _polish(A, family, cur, s, tol, max_polish, multipliers)
        weights[j - jmin] = cur
        prev = cur
    W = np.asarray(weights)

    dists, smooth, scores = audit_scheme(A, family, W, jmin, multipliers)
    alpha = max(math.exp(float(dists.max())), smooth, 1.0)
    bound = alpha_bound(family)
    if alpha > bound:
        raise AuditFailure(f"measured scheme alpha {alpha:.4g} exceeds the admissible {bound:.4g}")
    return WeightScheme(jmin, jmax, alpha, W, scores, dists, smooth, T, beta_eff)


def initial_weights(A, family: LossFamily, s_max: float, gamma: float = 0.5,
                    delta_pert: float = 1e-3, seed: int = 0, multipliers=None):
    """Starting weights for :func:`find_weights` via a quadratic perturbation.

    Returns ``(w, perturbed_family, beta)`` where the perturbed losses are
    ``f_i(z) + s_max w_i z^2`` and ``beta`` bounds ``d(phi(w), w)`` at
    ``s_max`` for them.
    """
    A = as_row_matrix(A, allow_zero_rows=False)
    m = A.shape[0]
    if not s_max > 0:
        raise ConfigError("s_max must be positive")
    if not 0 < gamma < 1:
        raise ConfigError("gamma must lie in (0, 1)")
    if not delta_pert > 0:
        raise ConfigError("perturbation size must be positive")
    cm = np.ones(m) if multipliers is None else np.asarray(multipliers, dtype=float)
    zhat = _solve_levels(family, gamma * s_max / cm, s_max / cm)
    U_w = zhat**-2.0
    tau = leverage(A, U_w, eps=1.0 / 3.0, seed=seed) / U_w
    w = delta_pert / tau
    pert = PerturbedLoss(family, s_max * w / cm)
    k = family.constants.sqrt_level()
    beta = math.log(1.0 + 128.0 * (k["L"] / k["c"]) ** 2 * m / delta_pert)
    return w, pert, beta


def _solve_levels(family, lo_t, hi_t, max_iter=200):
    """Per-term ``z > 0`` with ``lo_t <= f_i(z) <= hi_t``: doubling from 1, then bisection."""
    lo_t = np.asarray(lo_t, dtype=float)
    hi_t = np.asarray(hi_t, dtype=float)
    f = family.value
    hi = np.ones_like(lo_t)
    with np.errstate(over="ignore"):
        for _ in range(1100):
            need = f(hi) < lo_t
            if not np.any(need) or np.any(hi[need] > 1e300):
                break
            hi = np.where(need, hi * 2.0, hi)
        short = f(hi) < lo_t
    if np.any(short):
        raise ThresholdNotAttainedError(
            f"loss never reaches {float(np.max(lo_t)):.4g}; bounded losses need a proxy")
    lo = np.zeros_like(hi)
    z = hi.copy()
    for _ in range(max_iter):
        fz = f(z)
        done = (fz >= lo_t) & (fz <= hi_t)
        if np.all(done):
            break
        mid = 0.5 * (lo + hi)
        below = f(mid) < lo_t
        lo = np.where(~done & below, mid, lo)
        hi = np.where(~done & ~below, mid, hi)
        z = np.where(done, z, hi)
    return z

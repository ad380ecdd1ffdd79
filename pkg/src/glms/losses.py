"""Scalar loss families, their growth certificates and Bregman divergences.

Every family evaluates ``f_i(z)`` elementwise.  Per-term parameters (the
thresholds of the gamma-p family) are indexed by ``idx``; ``idx=None``
means "all terms, aligned with the last axis of ``z``".

Growth constants are stated for the loss ``f`` itself, except ``L`` which
is the auto-Lipschitz constant of ``sqrt(f)``:

    L      |h(z) - h(z')| <= L h(z - z')            h = sqrt(f)
    theta  f(lam z) >= c lam^theta f(z),  lam >= 1
    u      f(lam z) <= C lam^u f(z),      lam >= 1
    K      f(z) <= K f(-z)

so ``sqrt(f)`` is lower ``theta/2``-homogeneous with constant ``sqrt(c)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    NonDifferentiableError,
    UnsupportedError,
)

__all__ = [
    "LossConstants",
    "LossFamily",
    "PowerLoss",
    "GammaLoss",
    "TukeyProxyLoss",
    "TukeyLoss",
    "CustomLoss",
    "PerturbedLoss",
    "huber",
    "gamma_p",
    "default_tukey_eta",
    "loss_from_dict",
    "eval_loss",
    "eval_divergence",
    "DivergenceSurrogate",
    "divergence_surrogate",
    "surrogate_constants",
    "PropertyCheck",
    "Certificate",
    "certify_properties",
    "default_grid",
]


@dataclass(frozen=True)
class LossConstants:
    L: float = 1.0
    theta: float = 2.0
    c: float = 1.0
    u: float = 2.0
    C: float = 1.0
    K: float = 1.0

    def sqrt_level(self):
        """Constants of ``h = sqrt(f)`` used by the growth checks."""
        return {
            "L": self.L,
            "theta": self.theta / 2.0,
            "c": math.sqrt(self.c),
            "u": self.u / 2.0,
            "C": math.sqrt(self.C),
            "K": math.sqrt(self.K),
        }


def _as_float_array(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("loss argument must be finite")
    return z


class LossFamily:
    """Base class; subclasses implement ``value`` and usually ``deriv``."""

    kind = "custom"
    convex = False

    def __init__(self, constants: LossConstants | None = None):
        self.constants = constants if constants is not None else LossConstants()

    # per-term parameter plumbing -------------------------------------------------
    def take(self, idx) -> "LossFamily":
        """Family restricted to the terms ``idx`` (identity for uniform families)."""
        return self

    @property
    def n_terms(self) -> int | None:
        return None

    # evaluation -----------------------------------------------------------------
    def value(self, z, idx=None):
        raise NotImplementedError

    def deriv(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(z))
        return (self.value(z + h, idx) - self.value(z - h, idx)) / (2 * h)

    def deriv2(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        h = 1e-4 * np.maximum(1.0, np.abs(z))
        return (self.deriv(z + h, idx) - self.deriv(z - h, idx)) / (2 * h)

    def conjugate(self, y, idx=None):
        raise UnsupportedError(f"no convex conjugate for loss kind {self.kind!r}")

    def divergence(self, z0, delta, idx=None):
        z0 = np.asarray(z0, dtype=float)
        delta = np.asarray(delta, dtype=float)
        return self.value(z0 + delta, idx) - self.value(z0, idx) - self.deriv(z0, idx) * delta

    def sqrt_value(self, z, idx=None):
        return np.sqrt(self.value(z, idx))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "constants": asdict(self.constants)}

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class PowerLoss(LossFamily):
    """``f(z) = |z|^p`` for ``p`` in (0, 2]."""

    kind = "power-p"

    def __init__(self, p: float, constants: LossConstants | None = None):
        if not (0.0 < p <= 2.0):
            raise ConfigError(f"power-p needs p in (0, 2], got {p}")
        self.p = float(p)
        if constants is None:
            constants = LossConstants(L=1.0, theta=p, c=1.0, u=p, C=1.0, K=1.0)
        super().__init__(constants)
        self.convex = p >= 1.0

    def value(self, z, idx=None):
        z = _as_float_array(z)
        if self.p == 2.0:
            return z * z
        return np.abs(z) ** self.p

    def deriv(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        p = self.p
        if p <= 1.0 and np.any(z == 0):
            raise NonDifferentiableError(f"|z|^{p} is not differentiable at 0")
        with np.errstate(divide="ignore", invalid="ignore"):
            return p * np.sign(z) * np.abs(z) ** (p - 1.0)

    def deriv2(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        p = self.p
        if p == 2.0:
            return np.full_like(z, 2.0)
        with np.errstate(divide="ignore"):
            return p * (p - 1.0) * np.abs(z) ** (p - 2.0)

    def conjugate(self, y, idx=None):
        y = np.asarray(y, dtype=float)
        p = self.p
        if p < 1.0:
            raise UnsupportedError("conjugate of a non-convex power loss")
        if p == 1.0:
            return np.where(np.abs(y) <= 1.0, 0.0, np.inf)
        q = p / (p - 1.0)
        return (p - 1.0) * (np.abs(y) / p) ** q

    def divergence(self, z0, delta, idx=None):
        z0 = np.asarray(z0, dtype=float)
        delta = np.asarray(delta, dtype=float)
        if self.p <= 1.0 and np.any(z0 == 0):
            raise NonDifferentiableError(f"|z|^{self.p} has no derivative at z0 = 0")
        return _power_divergence(self.p, z0, delta)

    def to_dict(self):
        d = super().to_dict()
        d["p"] = self.p
        return d


def _binom_tail(p, u, kmax=10):
    # sum_{k>=2} binom(p, k) u^k, for |u| small
    coef = p * (p - 1.0) / 2.0
    term = coef * u * u
    total = term
    for k in range(3, kmax + 1):
        term = term * (p - k + 1.0) / k * u
        total = total + term
    return total


def _power_divergence(p, z0, delta):
    """Stable ``|z0+d|^p - |z0|^p - p sign(z0)|z0|^(p-1) d``."""
    z0, delta = np.broadcast_arrays(np.asarray(z0, float), np.asarray(delta, float))
    if p == 2.0:
        return delta * delta
    out = np.empty(z0.shape, dtype=float)
    az = np.abs(z0)
    zero = az == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(zero, 0.0, delta / np.where(zero, 1.0, z0))
    small = (~zero) & (np.abs(u) < 1e-2)
    big = ~(zero | small)
    out[zero] = np.abs(delta[zero]) ** p
    if np.any(small):
        out[small] = az[small] ** p * _binom_tail(p, u[small])
    if np.any(big):
        ub = u[big]
        out[big] = az[big] ** p * (np.abs(1.0 + ub) ** p - 1.0 - p * ub)
    return np.maximum(out, 0.0)


class GammaLoss(LossFamily):
    """Quadratic near zero, ``p``-th power in the tail.

    ``gamma_p(t, z) = (p/2) t^(p-2) z^2`` for ``|z| <= t`` and
    ``|z|^p - (1 - p/2) t^p`` beyond.  ``t = 0`` degenerates to ``|z|^p``.
    """

    kind = "gamma-p"

    def __init__(self, p: float, thresholds=1.0, constants: LossConstants | None = None):
        if not (0.0 < p <= 2.0):
            raise ConfigError(f"gamma-p needs p in (0, 2], got {p}")
        t = np.asarray(thresholds, dtype=float)
        if t.ndim > 1 or np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ConfigError("gamma-p thresholds must be a finite non-negative scalar or vector")
        self.p = float(p)
        self.thresholds = float(t) if t.ndim == 0 else t
        if constants is None:
            constants = LossConstants(L=1.0, theta=p, c=1.0, u=2.0, C=1.0, K=1.0)
        super().__init__(constants)
        self.convex = p >= 1.0

    @property
    def n_terms(self):
        return None if np.ndim(self.thresholds) == 0 else len(self.thresholds)

    def take(self, idx):
        if np.ndim(self.thresholds) == 0:
            return self
        return GammaLoss(self.p, self.thresholds[idx], self.constants)

    def _t(self, idx):
        t = self.thresholds
        if np.ndim(t) == 0 or idx is None:
            return t
        return t[idx]

    def value(self, z, idx=None):
        z = _as_float_array(z)
        p, t = self.p, self._t(idx)
        if p == 2.0:
            return z * z
        az = np.abs(z)
        tt = np.where(t > 0, t, 1.0)
        inner = 0.5 * p * tt**p * (az / tt) ** 2
        outer = az**p - (1.0 - 0.5 * p) * np.asarray(t) ** p
        return np.where(az <= t, inner, outer)

    def deriv(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        p, t = self.p, self._t(idx)
        az = np.abs(z)
        if p <= 1.0 and np.any((az == 0) & (np.asarray(t) == 0)):
            raise NonDifferentiableError("gamma-p with zero threshold is not differentiable at 0")
        tt = np.where(t > 0, t, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = p * tt ** (p - 1.0) * (z / tt)
            outer = p * np.sign(z) * az ** (p - 1.0)
        return np.where(az <= t, inner, outer)

    def deriv2(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        p, t = self.p, self._t(idx)
        az = np.abs(z)
        tt = np.where(t > 0, t, 1.0)
        with np.errstate(divide="ignore"):
            outer = p * (p - 1.0) * az ** (p - 2.0) if p != 2.0 else np.full_like(az, 2.0)
        inner = p * tt ** (p - 2.0)
        return np.where(az <= t, inner, outer)

    def conjugate(self, y, idx=None):
        y = np.asarray(y, dtype=float)
        p, t = self.p, self._t(idx)
        if p < 1.0:
            raise UnsupportedError("conjugate of a non-convex gamma-p loss")
        ay = np.abs(y)
        t = np.broadcast_to(np.asarray(t, dtype=float), ay.shape)
        knee = p * t ** (p - 1.0)  # slope at the threshold
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            inner = ay**2 * t ** (2.0 - p) / (2.0 * p)
            if p == 1.0:
                outer = np.full_like(ay, np.inf)
            else:
                zs = (ay / p) ** (1.0 / (p - 1.0))
                outer = (p - 1.0) * zs**p + (1.0 - 0.5 * p) * t**p
        return np.where(ay <= knee, inner, outer)

    def divergence(self, z0, delta, idx=None):
        z0, delta = np.broadcast_arrays(np.asarray(z0, float), np.asarray(delta, float))
        p = self.p
        t = np.broadcast_to(np.asarray(self._t(idx), dtype=float), z0.shape)
        if p <= 1.0 and np.any((z0 == 0) & (t == 0)):
            raise NonDifferentiableError("gamma-p with zero threshold is not differentiable at 0")
        if p == 2.0:
            return delta * delta
        z1 = z0 + delta
        both_in = (np.abs(z0) <= t) & (np.abs(z1) <= t)
        same_out = (np.abs(z0) >= t) & (np.abs(z1) >= t) & (np.sign(z0) * np.sign(z1) >= 0)
        out = self.value(z1, idx) - self.value(z0, idx) - self.deriv(z0, idx) * delta
        if np.any(both_in):
            tt = np.where(t > 0, t, 1.0)
            quad = 0.5 * p * tt**p * (delta / tt) ** 2
            out = np.where(both_in, quad, out)
        if np.any(same_out):
            nz = same_out & (z0 != 0)
            pw = _power_divergence(p, np.where(nz, z0, 1.0), np.where(nz, delta, 0.0))
            out = np.where(nz, pw, out)
        return np.maximum(out, 0.0)

    def to_dict(self):
        d = super().to_dict()
        d["p"] = self.p
        t = self.thresholds
        d["thresholds"] = t if np.ndim(t) == 0 else [float(v) for v in t]
        return d


def gamma_p(p: float, thresholds=1.0) -> GammaLoss:
    return GammaLoss(p, thresholds)


def huber(thresholds=1.0) -> GammaLoss:
    """Huber loss, i.e. gamma-1: ``z^2/2`` inside the threshold, ``|z| - 1/2`` outside."""
    return GammaLoss(1.0, thresholds)


def default_tukey_eta(n: int) -> float:
    return min(1.0, math.log(max(n, 3)) ** (-1.0 / 3.0))


class TukeyProxyLoss(LossFamily):
    """``min{|z|, |z|^eta}^2``: quadratic inside the unit interval, ``|z|^(2 eta)`` outside."""

    kind = "tukey-proxy"

    def __init__(self, eta: float, constants: LossConstants | None = None):
        if not (0.0 < eta <= 1.0):
            raise ConfigError(f"tukey-proxy needs eta in (0, 1], got {eta}")
        self.eta = float(eta)
        if constants is None:
            constants = LossConstants(L=1.0, theta=2 * eta, c=1.0, u=2.0, C=1.0, K=1.0)
        super().__init__(constants)
        self.convex = eta >= 0.5

    def value(self, z, idx=None):
        az = np.abs(_as_float_array(z))
        return np.minimum(az, az**self.eta) ** 2

    def deriv(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        az = np.abs(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            outer = 2 * self.eta * np.sign(z) * az ** (2 * self.eta - 1.0)
        return np.where(az <= 1.0, 2 * z, outer)

    def deriv2(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        az = np.abs(z)
        e = self.eta
        with np.errstate(divide="ignore"):
            outer = 2 * e * (2 * e - 1.0) * az ** (2 * e - 2.0)
        return np.where(az <= 1.0, 2.0, outer)

    def to_dict(self):
        d = super().to_dict()
        d["eta"] = self.eta
        return d


class TukeyLoss(LossFamily):
    """Bounded Tukey-type loss ``min{z^2, 1}``; fails lower homogeneity."""

    kind = "tukey"

    def __init__(self, constants: LossConstants | None = None):
        if constants is None:
            # theta = 0 records the missing lower growth
            constants = LossConstants(L=1.0, theta=0.0, c=1.0, u=2.0, C=1.0, K=1.0)
        super().__init__(constants)

    def value(self, z, idx=None):
        z = _as_float_array(z)
        return np.minimum(z * z, 1.0)

    def deriv(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) < 1.0, 2 * z, 0.0)

    def deriv2(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) < 1.0, 2.0, 0.0)


class CustomLoss(LossFamily):
    """User-supplied ``f`` with claimed constants; must pass :func:`certify_properties`."""

    kind = "custom"

    def __init__(self, func: Callable, constants: LossConstants, deriv: Callable | None = None,
                 convex: bool = False):
        super().__init__(constants)
        self.func = func
        self._deriv = deriv
        self.convex = convex

    def value(self, z, idx=None):
        z = _as_float_array(z)
        return np.asarray(self.func(z), dtype=float)

    def deriv(self, z, idx=None):
        if self._deriv is not None:
            return np.asarray(self._deriv(np.asarray(z, dtype=float)), dtype=float)
        return super().deriv(z, idx)


class PerturbedLoss(LossFamily):
    """``f_i(z) + q_i z^2``; used to obtain provably good starting weights."""

    kind = "perturbed"

    def __init__(self, base: LossFamily, quad):
        self.base = base
        self.quad = np.asarray(quad, dtype=float)
        bc = base.constants
        constants = LossConstants(L=max(1.0, bc.L), theta=bc.theta, c=bc.c, u=2.0,
                                  C=max(1.0, bc.C), K=bc.K)
        super().__init__(constants)
        self.convex = base.convex

    @property
    def n_terms(self):
        return len(self.quad)

    def take(self, idx):
        return PerturbedLoss(self.base.take(idx), self.quad[idx])

    def _q(self, idx):
        return self.quad if idx is None else self.quad[idx]

    def value(self, z, idx=None):
        z = _as_float_array(z)
        return self.base.value(z, idx) + self._q(idx) * z * z

    def deriv(self, z, idx=None):
        z = np.asarray(z, dtype=float)
        return self.base.deriv(z, idx) + 2 * self._q(idx) * z

    def deriv2(self, z, idx=None):
        return self.base.deriv2(z, idx) + 2 * self._q(idx)

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(),
                "quad": [float(v) for v in self.quad]}


def loss_from_dict(d: dict) -> LossFamily:
    """Inverse of ``LossFamily.to_dict`` for the serializable families."""
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError("loss JSON must be an object with a 'kind' field")
    kind = d["kind"]
    constants = LossConstants(**d["constants"]) if d.get("constants") else None
    try:
        if kind in ("power-p", "lp", "power"):
            return PowerLoss(float(d["p"]), constants)
        if kind in ("gamma-p", "gamma"):
            t = d.get("thresholds", d.get("t", 1.0))
            if np.any(np.asarray(t, dtype=float) <= 0):
                raise ConfigError("gamma-p thresholds must be strictly positive")
            return GammaLoss(float(d["p"]), t, constants)
        if kind == "huber":
            t = d.get("thresholds", d.get("t", 1.0))
            return GammaLoss(1.0, t, constants)
        if kind == "tukey-proxy":
            return TukeyProxyLoss(float(d["eta"]), constants)
        if kind == "tukey":
            return TukeyLoss(constants)
        if kind == "perturbed":
            return PerturbedLoss(loss_from_dict(d["base"]), d["quad"])
    except KeyError as exc:
        raise ConfigError(f"loss JSON for kind {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown or non-serializable loss kind {kind!r}")


# scalar front doors ---------------------------------------------------------------

def eval_loss(family: LossFamily, i, z) -> float:
    """``f_i(z)``; raises :class:`DomainError` for non-finite ``z``."""
    if not np.isfinite(z):
        raise DomainError(f"non-finite argument {z!r}")
    return float(family.value(np.float64(z), i))


def eval_divergence(family: LossFamily, i, z0, delta) -> float:
    """Bregman divergence ``f_i(z0 + delta) - f_i(z0) - f_i'(z0) delta``."""
    if not (np.isfinite(z0) and np.isfinite(delta)):
        raise DomainError("non-finite divergence argument")
    return float(family.divergence(np.float64(z0), np.float64(delta), i))


# divergence surrogates ----------------------------------------------------------------

def _surrogate_ratio(p, inside, rel, delta):
    """``D / gamma_p(1, delta)`` for a normalized center (threshold ``T = 1``).

    ``inside``: loss threshold 1, center ``rel``.  Otherwise: center 1,
    loss threshold ``rel`` (``rel = 0`` is the pure power).
    """
    shape = GammaLoss(p, 1.0)
    delta = np.asarray(delta, dtype=float)
    if inside:
        d = shape.divergence(np.full_like(delta, rel), delta)
    else:
        d = GammaLoss(p, rel).divergence(np.ones_like(delta), delta)
    return d / shape.value(delta)


def _surrogate_extremes(p):
    """Min and max of the normalized ratio: grid search, then local refinement."""
    from scipy.optimize import minimize

    k = np.arange(-24, 25, 0.25)
    mags = 2.0**k
    extra = np.linspace(-6.0, 6.0, 2401)
    deltas = np.concatenate([-mags, mags, extra[extra != 0]])
    rels = np.linspace(0.0, 1.0, 41)
    pts = []  # (ratio, inside, rel, delta)
    for rel in rels:
        for inside in (False, True):
            if inside and rel == 0:
                continue
            r = _surrogate_ratio(p, inside, rel, deltas)
            for j in (int(np.argmin(r)), int(np.argmax(r))):
                pts.append((float(r[j]), inside, float(rel), float(deltas[j])))
    lo = min(v[0] for v in pts)
    hi = max(v[0] for v in pts)

    def refine(start, sign):
        _, inside, rel, d = start
        sgn = math.copysign(1.0, d)

        def obj(v):
            rr = min(max(v[0], 1e-12 if inside else 0.0), 1.0)
            return sign * float(_surrogate_ratio(p, inside, rr, np.array([sgn * math.exp(v[1])]))[0])

        res = minimize(obj, [rel, math.log(abs(d))], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
        return sign * res.fun

    for cand in sorted(pts, key=lambda v: v[0])[:4]:
        lo = min(lo, refine(cand, 1.0))
    for cand in sorted(pts, key=lambda v: -v[0])[:4]:
        hi = max(hi, refine(cand, -1.0))
    return lo, hi


@lru_cache(maxsize=64)
def surrogate_constants(p: float):
    """Measured ``(kappa, alpha)`` with ``kappa*g <= D <= alpha*kappa*g``.

    ``g = gamma_p(T, .)`` with ``T`` the surrogate threshold.  Extremes are
    located on a grid, refined locally and widened by a relative 1e-9.
    """
    if not (1.0 < p <= 2.0):
        raise UnsupportedError(f"refinement surrogates need p in (1, 2], got {p}")
    if p == 2.0:
        return 1.0, 1.0
    lo, hi = _surrogate_extremes(float(p))
    lo *= 1.0 - 1e-9
    hi *= 1.0 + 1e-9
    return lo, hi / lo


@dataclass
class DivergenceSurrogate:
    """``r(delta) = kappa * gamma_p(threshold, delta)`` around a center ``z0``."""

    center: float
    p: float
    threshold: float
    kappa: float
    alpha: float
    theta: float = field(init=False)
    c: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        self.theta = self.p

    def __call__(self, delta):
        return self.kappa * GammaLoss(self.p, self.threshold).value(delta)

    def family(self) -> GammaLoss:
        return GammaLoss(self.p, self.threshold)


def divergence_surrogate(family: LossFamily, i, z0: float) -> DivergenceSurrogate:
    """Surrogate ``r_{z0}`` sandwiching the divergence of ``f_i`` at ``z0``."""
    if isinstance(family, PowerLoss):
        p, t = family.p, 0.0
    elif isinstance(family, GammaLoss):
        p, t = family.p, float(family._t(i))
    else:
        raise UnsupportedError(f"no divergence surrogate for loss kind {family.kind!r}")
    if p <= 1.0:
        raise UnsupportedError("refinement needs p > 1 (lower homogeneity theta > 1)")
    kappa, alpha = surrogate_constants(p)
    return DivergenceSurrogate(center=float(z0), p=p, threshold=max(abs(float(z0)), t),
                               kappa=kappa, alpha=alpha)


def surrogate_thresholds(family: LossFamily, z0):
    """Vectorized thresholds of the surrogates centered at the residuals ``z0``."""
    z0 = np.abs(np.asarray(z0, dtype=float))
    if isinstance(family, PowerLoss):
        return z0.copy()
    if isinstance(family, GammaLoss):
        return np.maximum(z0, np.broadcast_to(family.thresholds, z0.shape))
    raise UnsupportedError(f"no divergence surrogate for loss kind {family.kind!r}")


# certification ------------------------------------------------------------------------

def default_grid():
    k = np.arange(-20, 21)
    mags = 2.0 ** k.astype(float)
    zs = np.concatenate([-mags[::-1], [0.0], mags])
    lams = 2.0 ** np.arange(0, 11).astype(float)
    return zs, lams


@dataclass
class PropertyCheck:
    name: str
    constant: float
    passed: bool
    worst_ratio: float
    witness: tuple

    def to_dict(self):
        return {"name": self.name, "constant": self.constant, "passed": self.passed,
                "worst_ratio": self.worst_ratio, "witness": list(self.witness)}


@dataclass
class Certificate:
    kind: str
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self):
        return [c for c in self.checks.values() if not c.passed]

    def to_dict(self):
        return {"kind": self.kind, "passed": self.passed,
                "checks": {k: v.to_dict() for k, v in self.checks.items()}}


def _worst(ratio, *coords):
    ratio = np.where(np.isnan(ratio), 0.0, ratio)
    top = ratio.max()
    # ties go to the point of largest magnitude
    cand = np.flatnonzero(ratio.ravel() >= top * (1 - 1e-12))
    mag = np.abs(np.broadcast_to(coords[0], ratio.shape).ravel()[cand]) if coords else cand
    j = int(cand[np.argmax(mag)])
    return float(ratio.flat[j]), tuple(float(np.asarray(c).flat[j]) for c in coords)


def certify_properties(family: LossFamily, grid=None, tol: float = 1e-9, idx=None) -> Certificate:
    """Check the growth properties of ``h = sqrt(f_idx)`` on a grid of points and scalings.

    Each check reports the worst ratio ``lhs / rhs`` (passing means at most
    ``1 + tol``) and the grid point attaining it.  Two implied
    properties are recorded as extra checks on the measured constants.
    """
    zs, lams = default_grid() if grid is None else grid
    zs = np.asarray(zs, dtype=float)
    lams = np.asarray(lams, dtype=float)
    if zs.size == 0 or lams.size == 0:
        raise ConfigError("certification grid is empty")
    k = family.constants.sqrt_level()
    f = lambda z: family.value(z, idx)  # noqa: E731
    h = lambda z: np.sqrt(f(z))  # noqa: E731
    lim = 1.0 + tol
    checks = {}

    fz = f(zs)
    zero_ok = float(f(np.array(0.0))) == 0.0 and bool(np.all(fz >= 0))
    checks["nonnegative"] = PropertyCheck("nonnegative", 0.0, zero_ok,
                                          0.0 if zero_ok else 1.0, ())

    Z, Zp = np.meshgrid(zs, zs, indexing="ij")
    hz, hzp, hd = h(Z), h(Zp), h(Z - Zp)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.abs(hz - hzp) / (k["L"] * hd)
    r1 = np.where(np.abs(hz - hzp) == 0, 0.0, r1)
    w, wit = _worst(r1, Z, Zp)
    checks["auto_lipschitz"] = PropertyCheck("auto_lipschitz", k["L"], w <= lim, w, wit)

    Zl, Ll = np.meshgrid(zs, lams, indexing="ij")
    hlz, hz2 = h(Ll * Zl), h(Zl)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = k["c"] * Ll ** k["theta"] * hz2 / hlz
    r2 = np.where(hz2 == 0, 0.0, r2)
    w, wit = _worst(r2, Zl, Ll)
    checks["lower_homogeneous"] = PropertyCheck("lower_homogeneous", k["c"], w <= lim, w, wit)

    with np.errstate(divide="ignore", invalid="ignore"):
        r5 = hlz / (k["C"] * Ll ** k["u"] * hz2)
    r5 = np.where(hlz == 0, 0.0, r5)
    w, wit = _worst(r5, Zl, Ll)
    checks["upper_homogeneous"] = PropertyCheck("upper_homogeneous", k["C"], w <= lim, w, wit)

    hneg = h(-zs)
    hpos = h(zs)
    with np.errstate(divide="ignore", invalid="ignore"):
        r3 = hpos / (k["K"] * hneg)
    r3 = np.where(hpos == 0, 0.0, r3)
    w, wit = _worst(r3, zs)
    checks["symmetric"] = PropertyCheck("symmetric", k["K"], w <= lim, w, wit)

    mono = 1.0 / k["c"]
    with np.errstate(divide="ignore", invalid="ignore"):
        r4 = hz2 / (mono * hlz)
    r4 = np.where(hz2 == 0, 0.0, r4)
    w, wit = _worst(r4, Zl, Ll)
    checks["monotone"] = PropertyCheck("monotone", mono, w <= lim, w, wit)

    # implications: auto-Lipschitz => L-symmetric; auto-Lipschitz + monotone => upper
    # 1-homogeneous with constant 2 C L for h
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = np.where(hpos == 0, 0.0, hpos / (k["L"] * hneg))
        ru = np.where(hlz == 0, 0.0, hlz / (2 * mono * k["L"] * Ll * hz2))
    w, wit = _worst(rs, zs)
    checks["implied_symmetric"] = PropertyCheck("implied_symmetric", k["L"], w <= lim, w, wit)
    w, wit = _worst(ru, Zl, Ll)
    checks["implied_upper_1"] = PropertyCheck("implied_upper_1", 2 * mono * k["L"], w <= lim,
                                              w, wit)
    return Certificate(family.kind, checks)

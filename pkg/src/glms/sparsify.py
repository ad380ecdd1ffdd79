"""Importance-sampling sparsifiers built from weight schemes, plus audits.

Rows are sampled i.i.d. with probabilities proportional to the scheme
scores ``max_j sigma_i(W_j^{1/2} A)``; a row drawn ``k`` times out of ``M``
gets weight ``k / (M rho_i)`` so the sparsifier is unbiased.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import make_rng
from .errors import AuditFailure, ConfigError, InconsistencyError
from .instance import ProblemInstance, lift_shift
from .linalg import as_row_matrix, leverage_exact
from .losses import GammaLoss, TukeyLoss, TukeyProxyLoss, default_tukey_eta
from .weights import WeightScheme, find_weights, initial_weights

__all__ = [
    "SparsifyConfig",
    "SparsifiedModel",
    "scale_range",
    "sample_budget",
    "support_bound",
    "sampling_plan",
    "sparsify_once",
    "sparsify",
    "huber_globalize",
    "tukey_sparsify",
    "AuditReport",
    "audit_sparsifier",
    "audit_points",
    "weight_scheme_for",
]


@dataclass
class SparsifyConfig:
    eps: float
    smin: float
    smax: float
    seed: int
    rounds: int = 1
    eps_schedule: tuple | None = None
    budget: int | None = None
    C_M: float = 1.0
    max_doublings: int = 3
    audit: bool = True
    n_dirs: int = 64
    n_scales: int = 24
    weight_eps: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.eps < 0.5):
            raise ConfigError(f"eps must lie in (0, 1/2), got {self.eps}")
        if not (0.0 < self.smin < self.smax) or not math.isfinite(self.smax):
            raise ConfigError(f"need 0 < smin < smax < inf, got [{self.smin}, {self.smax}]")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("sample budget override must be at least 1")
        if self.rounds < 1:
            raise ConfigError("need at least one sampling round")
        if self.eps_schedule is not None:
            sch = tuple(float(e) for e in self.eps_schedule)
            if len(sch) != self.rounds or any(not 0 < e < 0.5 for e in sch):
                raise ConfigError("eps schedule must give one value in (0, 1/2) per round")
            self.eps_schedule = sch
        if self.C_M <= 0:
            raise ConfigError("C_M must be positive")

    def schedule(self):
        """Per-round accuracies; by default geometric with ratio 3 summing to ``eps``."""
        if self.eps_schedule is not None:
            return self.eps_schedule
        g = [3.0**k for k in range(self.rounds)]
        tot = sum(g)
        return tuple(self.eps * v / tot for v in g)


@dataclass
class SparsifiedModel:
    """``F~(x) = sum_k weights_k f_{indices_k}(<a, x> - b)`` over the kept rows."""

    indices: np.ndarray
    weights: np.ndarray
    smin: float | None
    smax: float | None
    eps: float
    seed: int
    stats: dict = field(default_factory=dict)
    is_global: bool = False
    scheme: WeightScheme | None = field(default=None, repr=False)

    @property
    def support(self) -> int:
        return int(self.indices.size)

    def terms(self, instance: ProblemInstance, x):
        x = np.asarray(x, dtype=float)
        A = instance.A[self.indices]
        b = instance.b[self.indices]
        if x.ndim == 1:
            return self.weights * instance.family.value(A @ x - b, self.indices)
        r = (A @ x - b[:, None]).T
        return (self.weights * instance.family.value(r, self.indices)).T

    def value(self, instance: ProblemInstance, x):
        return self.terms(instance, x).sum(axis=0)

    def as_instance(self, instance: ProblemInstance) -> ProblemInstance:
        sub = instance.subset(self.indices)
        sub.multipliers = self.weights.copy()
        return sub

    def to_dict(self) -> dict:
        return {
            "indices": [int(i) for i in self.indices],
            "weights": [float(v) for v in self.weights],
            "smin": None if self.smin is None else float(self.smin),
            "smax": None if self.smax is None else float(self.smax),
            "eps": float(self.eps),
            "seed": int(self.seed),
            "global": bool(self.is_global),
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparsifiedModel":
        try:
            idx = np.asarray(d["indices"], dtype=int)
            w = np.asarray(d["weights"], dtype=float)
            if idx.shape != w.shape or np.any(w < 0):
                raise ConfigError("model indices and weights must align and be non-negative")
            return cls(idx, w, d.get("smin"), d.get("smax"), float(d["eps"]), int(d["seed"]),
                       dict(d.get("stats", {})), bool(d.get("global", False)))
        except KeyError as exc:
            raise ConfigError(f"model JSON lacks field {exc}") from None


def scale_range(smin: float, smax: float, m: int):
    """``(jmin, jmax)`` with ``jmin = floor(log2 smin) - ceil(4 log2 m)``."""
    jmax = int(math.ceil(math.log2(smax)))
    jmin = int(math.floor(math.log2(smin))) - int(math.ceil(4 * math.log2(max(m, 2))))
    return jmin, jmax


def sample_budget(eps: float, tau_l1: float, m: int, C_M: float = 1.0) -> int:
    return max(1, int(math.ceil(C_M * eps**-2 * tau_l1 * math.log2(max(m, 2)) ** 3)))


def support_bound(n: int, eps: float, smin: float, smax: float) -> float:
    """``(n/eps^2) log(n/eps * smax/smin) (log S)^3`` with ``S = (n/eps) log(2 smax/smin)``."""
    S = (n / eps) * math.log(2 * smax / smin)
    return (n / eps**2) * math.log(n / eps * smax / smin) * math.log(S) ** 3


def sampling_plan(scheme: WeightScheme) -> np.ndarray:
    tau = np.asarray(scheme.scores, dtype=float)
    if np.any(tau <= 0):
        raise InconsistencyError("a row has zero score at every scale")
    return tau / tau.sum()


def _working(instance: ProblemInstance):
    return lift_shift(instance) if instance.shifted else instance


def weight_scheme_for(instance: ProblemInstance, jmin: int, jmax: int, eps: float,
                      smin: float, seed: int, weight_eps: float = 0.1, family=None):
    """Scheme for ``instance`` (or for ``family`` on its rows) on ``[2^jmin, 2^jmax]``.

    Starting weights come from a quadratic perturbation of size
    ``eps * smin / (m^3 * smax)``.
    """
    work = _working(instance)
    fam = work.family if family is None else family
    m = work.m
    smax_s = 2.0**jmax
    delta = eps * smin / (m**3 * smax_s)
    w0, pert, beta = initial_weights(work.A, fam, smax_s, delta_pert=delta, seed=seed,
                                     multipliers=work.multipliers)
    return find_weights(work.A, pert, jmin, jmax, w0, beta, eps=weight_eps, seed=seed,
                        multipliers=work.multipliers)


def sparsify_once(instance: ProblemInstance, scheme: WeightScheme, cfg: SparsifyConfig,
                  eps: float | None = None, C_M: float | None = None,
                  stream=0) -> SparsifiedModel:
    """Draw ``M`` rows from the scheme's sampling plan and collapse duplicates."""
    eps = cfg.eps if eps is None else eps
    C_M = cfg.C_M if C_M is None else C_M
    rho = sampling_plan(scheme)
    if rho.size != instance.m:
        raise ConfigError("scheme and instance disagree on the number of rows")
    M = cfg.budget if cfg.budget is not None else sample_budget(eps, scheme.tau_l1,
                                                                instance.m, C_M)
    rng = make_rng(cfg.seed, "sparsify", stream)
    counts = rng.multinomial(M, rho)
    idx = np.flatnonzero(counts)
    w = instance.multipliers[idx] * counts[idx] / (M * rho[idx])
    stats = {
        "M": int(M),
        "support": int(idx.size),
        "tau_l1": float(scheme.tau_l1),
        "alpha": float(scheme.alpha),
        "C_M": float(C_M),
        "rho_sha256": hashlib.sha256(rho.tobytes()).hexdigest(),
        "scales": [int(scheme.jmin), int(scheme.jmax)],
    }
    return SparsifiedModel(idx, w, cfg.smin, cfg.smax, eps, cfg.seed, stats, False, scheme)


def _compose(parent: SparsifiedModel, child: SparsifiedModel) -> SparsifiedModel:
    idx = parent.indices[child.indices]
    return replace(child, indices=idx)


def sparsify(instance: ProblemInstance, cfg: SparsifyConfig) -> SparsifiedModel:
    """Weight scheme, sampling and audit, repeated over the bootstrap rounds.

    Each round sparsifies the previous round's model.  When the audit finds
    a relative error above the round's accuracy, the budget constant is
    doubled (at most ``cfg.max_doublings`` times).
    """
    current = instance
    model = None
    history = []
    for k, eps_k in enumerate(cfg.schedule()):
        jmin, jmax = scale_range(cfg.smin, cfg.smax, current.m)
        scheme = weight_scheme_for(current, jmin, jmax, eps_k, cfg.smin,
                                   seed=cfg.seed * 7919 + k, weight_eps=cfg.weight_eps)
        C_M = cfg.C_M
        doublings = 0
        while True:
            sub = sparsify_once(current, scheme, cfg, eps=eps_k, C_M=C_M,
                                stream=1000 * k + doublings)
            err = None
            if cfg.audit:
                rep = audit_sparsifier(current, sub, cfg.n_dirs, cfg.n_scales,
                                       seed=cfg.seed * 31 + k)
                err = rep.max_rel_error
            if err is None or err <= eps_k or doublings >= cfg.max_doublings:
                break
            C_M *= 2.0
            doublings += 1
        history.append({"eps": eps_k, "M": sub.stats["M"], "support": sub.support,
                        "C_M": C_M, "doublings": doublings, "audit_max_rel_error": err,
                        "m_in": current.m})
        model = sub if model is None else _compose(model, sub)
        current = sub.as_instance(current)
    model.eps = cfg.eps
    model.weights = current.multipliers.copy()
    model.stats = dict(model.stats)
    model.stats["rounds"] = history
    model.stats["support"] = model.support
    model.stats["doublings"] = sum(h["doublings"] for h in history)
    model.stats["support_bound"] = support_bound(instance.n, cfg.eps, cfg.smin, cfg.smax)
    if history[-1]["audit_max_rel_error"] is not None:
        model.stats["audit_max_rel_error"] = history[-1]["audit_max_rel_error"]
    return model


def huber_globalize(model: SparsifiedModel, instance: ProblemInstance,
                    max_resamples: int = 16) -> SparsifiedModel:
    """Mark a Huber sparsifier built on ``[1/2, 8 m^3]`` as valid for all ``x``.

    Requires the largest sampled weight (relative to the instance
    multipliers) to be at most ``2m``; violating draws are re-sampled.
    """
    fam = instance.family
    if not (isinstance(fam, GammaLoss) and fam.p == 1.0 and np.all(np.asarray(fam.thresholds) == 1.0)):
        raise ConfigError("globalization needs Huber losses with unit thresholds")
    m = instance.m
    if not (1.0 / m < model.eps < 1.0):
        raise ConfigError(f"globalization needs 1/m < eps < 1, got eps={model.eps}, m={m}")
    if model.smin is None or not (math.isclose(model.smin, 0.5)
                                  and math.isclose(model.smax, 8.0 * m**3)):
        raise ConfigError("globalization needs a model built on [1/2, 8 m^3]")

    def max_rel_weight(mod):
        return float(np.max(mod.weights / instance.multipliers[mod.indices]))

    cur = model
    tries = 0
    while max_rel_weight(cur) > 2.0 * m:
        if cur.scheme is None or tries >= max_resamples:
            raise AuditFailure(
                f"largest weight {max_rel_weight(cur):.4g} exceeds 2m = {2 * m} "
                f"after {tries} re-samples")
        tries += 1
        cfg = SparsifyConfig(model.eps, model.smin, model.smax, model.seed,
                             C_M=model.stats.get("C_M", 1.0), audit=False)
        cur = sparsify_once(instance, cur.scheme, cfg, stream=f"resample-{tries}")
    out = replace(cur, is_global=True, stats=dict(cur.stats))
    out.stats["resamples"] = tries
    out.stats["max_rel_weight"] = max_rel_weight(cur)
    return out


def tukey_sparsify(instance: ProblemInstance, cfg: SparsifyConfig, row_norm_bound=None,
                   x_norm_bound=None, eta: float | None = None, C_J: float = 2.0):
    """Sparsify Tukey losses with a scheme computed for the proxy ``min{|z|,|z|^eta}^2``.

    Scales run over ``|j| <= C_J log2 m``; the result is meant for
    ``|x| <= x_norm_bound``.
    """
    if row_norm_bound is None or x_norm_bound is None:
        raise ConfigError("Tukey sparsification needs declared row-norm and x-norm bounds")
    if not isinstance(instance.family, TukeyLoss):
        raise ConfigError("tukey_sparsify expects Tukey losses")
    work = _working(instance)
    norms = np.linalg.norm(work.A, axis=1)
    if np.any(norms > row_norm_bound):
        raise ConfigError(f"row norm {norms.max():.4g} exceeds the declared bound {row_norm_bound}")
    m = work.m
    proxy = TukeyProxyLoss(default_tukey_eta(instance.n) if eta is None else eta)
    jmax = int(math.ceil(C_J * math.log2(max(m, 2))))
    jmin = -jmax
    scheme = weight_scheme_for(instance, jmin, jmax, cfg.eps, 2.0**jmin, seed=cfg.seed,
                               weight_eps=cfg.weight_eps, family=proxy)
    model = sparsify_once(instance, scheme, cfg)
    model.smin = model.smax = None
    model.stats["x_norm_bound"] = float(x_norm_bound)
    model.stats["row_norm_bound"] = float(row_norm_bound)
    model.stats["eta"] = proxy.eta
    return model


# audits ----------------------------------------------------------------------------------

@dataclass
class AuditReport:
    max_rel_error: float
    worst_x: np.ndarray
    worst_value: float
    n_points: int
    sensitivity_sums: list
    C_xi: float
    scales: list

    def to_dict(self):
        return {
            "max_rel_error": float(self.max_rel_error),
            "worst_x": [float(v) for v in self.worst_x],
            "worst_value": float(self.worst_value),
            "n_points": int(self.n_points),
            "sensitivity_sums": [float(v) for v in self.sensitivity_sums],
            "C_xi": float(self.C_xi),
            "scales": [float(v) for v in self.scales],
        }


def _audit_directions(A, n_dirs, seed, max_rows=256):
    m, n = A.shape
    rng = make_rng(seed, "audit-directions")
    G = rng.standard_normal((n, n_dirs))
    E = np.eye(n)
    _, tau = leverage_exact(A, np.ones(m))
    if m <= max_rows:
        rows = np.arange(m)
    else:
        top = np.argsort(-tau, kind="stable")[: max_rows // 2]
        rest = np.setdiff1d(np.arange(m), top)
        rows = np.sort(np.concatenate([top, rng.choice(rest, max_rows - top.size,
                                                       replace=False)]))
    P = np.linalg.pinv(A.T @ A)
    R = P @ A[rows].T
    V = np.hstack([G, E, R])
    norms = np.linalg.norm(V, axis=0)
    return V[:, norms > 0] / norms[norms > 0]


def _hit_targets(inst: ProblemInstance, V, targets, iters=40):
    """Scalings ``lam`` with ``F(lam v) ~ target`` by damped log-log Newton.

    Returns an array ``(D, K)`` of scalings; targets out of reach stay at
    the closest value found.
    """
    Z = inst.A @ V  # m x D
    D, K = V.shape[1], len(targets)
    logt = np.log(targets)[None, :]
    loglam = np.zeros((D, K))
    fam, c = inst.family, inst.multipliers
    slope = max(inst.family.constants.u, 1e-3)
    for _ in range(iters):
        lam = np.exp(loglam)
        vals = np.empty((D, K))
        for d in range(D):
            vals[d] = (c[:, None] * fam.value((Z[:, d][:, None] * lam[d][None, :]).T).T).sum(0)
        gap = logt - np.log(np.maximum(vals, 1e-300))
        if np.max(np.abs(gap)) < 1e-3:
            break
        loglam = np.clip(loglam + gap / slope, -700.0, 700.0)
    return np.exp(loglam)


def audit_points(instance: ProblemInstance, model: SparsifiedModel, X):
    """Relative errors ``|F - F~| / F`` at the columns of ``X`` (working coordinates)."""
    work = _working(instance)
    X = np.asarray(X, dtype=float)
    F = work.value(X)
    Ft = model.value(work, X)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(F > 0, np.abs(F - Ft) / F, np.where(Ft == 0, 0.0, np.inf))
    return rel, F, Ft


def audit_sparsifier(instance: ProblemInstance, model: SparsifiedModel, n_dirs: int = 64,
                     n_scales: int = 24, seed: int = 0, smin=None, smax=None) -> AuditReport:
    """Empirical accuracy and sensitivity sums over a set of audit points.

    Points are scalings of Gaussian, coordinate and row-aligned directions
    with ``F`` at ``n_scales`` log-spaced targets in ``[smin, smax]``.
    Shifted instances are audited in homogenized coordinates.
    """
    work = _working(instance)
    smin = model.smin if smin is None else smin
    smax = model.smax if smax is None else smax
    if smin is None or smax is None:
        raise ConfigError("audit range unknown; pass smin and smax")
    targets = np.geomspace(smin, smax, n_scales)
    V = _audit_directions(work.A, n_dirs, seed)
    lam = _hit_targets(work, V, targets)
    X = (V[:, :, None] * lam[None, :, :]).reshape(work.n, -1)
    F = work.value(X)
    keep = (F >= smin * (1 - 1e-9)) & (F <= smax * (1 + 1e-9))
    X, F = X[:, keep], F[keep]
    if X.shape[1] == 0:
        return AuditReport(0.0, np.zeros(work.n), 0.0, 0, [], 0.0, [])
    rel, _, _ = audit_points(work, model, X)
    j = int(np.argmax(rel))
    # sensitivity sums over the shells [s/2, s]
    masks = [(F >= s / 2) & (F <= s) for s in targets]
    shells = [float(s) for s, mk in zip(targets, masks) if np.any(mk)]
    masks = [mk for mk in masks if np.any(mk)]
    xi = np.zeros((len(masks), work.m))
    step = max(1, 2_000_000 // work.m)
    for a in range(0, X.shape[1], step):
        sl = slice(a, a + step)
        ratios = work.terms(X[:, sl]) / F[None, sl]
        for k, mk in enumerate(masks):
            sel = mk[sl]
            if np.any(sel):
                xi[k] = np.maximum(xi[k], ratios[:, sel].max(axis=1))
    sums = [float(v) for v in xi.sum(axis=1)]
    C_xi = max(sums) / work.n if sums else 0.0
    return AuditReport(float(rel[j]), X[:, j].copy(), float(F[j]), int(X.shape[1]),
                       sums, C_xi, shells)

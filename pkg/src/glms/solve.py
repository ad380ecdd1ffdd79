"""Iterative refinement for convex GLMs and the drivers built on it.

Each refinement step linearizes ``F`` at ``x``, adds a down-weighted
(and, for large inputs, sparsified) Bregman term, minimizes the result with
a damped Newton oracle and moves part of the way towards the minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleError, UnboundedError, UnsupportedError
from .instance import ProblemInstance
from .losses import GammaLoss, PowerLoss, huber, surrogate_constants, surrogate_thresholds
from .sparsify import SparsifyConfig, audit_sparsifier, huber_globalize, sparsify

__all__ = [
    "OracleResult",
    "glm_oracle",
    "dual_lower_bound",
    "RefinementConfig",
    "refinement_config",
    "IterateInfo",
    "glm_iterate",
    "SolveReport",
    "solve_glm",
    "solve_lp",
    "solve_lp_dual",
    "solve_huber",
]


# oracle --------------------------------------------------------------------------------

@dataclass
class OracleResult:
    x: np.ndarray
    value: float
    lower_bound: float
    iterations: int
    certified: bool
    reason: str

    @property
    def gap(self) -> float:
        return self.value - self.lower_bound


def _has_conjugate(family) -> bool:
    return isinstance(family, (PowerLoss, GammaLoss)) and family.p >= 1.0


def dual_lower_bound(inst: ProblemInstance, x, y_lin=None, pinvA=None) -> float:
    """Fenchel lower bound on ``min_x <y, x> + sum_i c_i f_i(<a_i, x> - b_i)``.

    Uses ``u`` = projection of ``c * f'(Ax - b)`` onto ``{A^T u = -y}``;
    any such ``u`` gives ``-sum_i c_i f_i*(u_i/c_i) - <u, b>``.
    """
    fam = inst.family
    if not _has_conjugate(fam):
        return -math.inf
    c = inst.multipliers
    live = c > 0
    A, b, cl = inst.A[live], inst.b[live], c[live]
    idx = np.flatnonzero(live)
    y = np.zeros(inst.n) if y_lin is None else np.asarray(y_lin, dtype=float)
    r = A @ x - b
    u0 = cl * _first(fam, r, idx)
    if pinvA is None:
        pinvA = np.linalg.pinv(A)
    resid = A.T @ u0 + y
    u = u0 - pinvA.T @ resid
    scale = np.linalg.norm(y) + np.linalg.norm(np.abs(A).T @ np.abs(u0)) + 1e-300
    if np.linalg.norm(A.T @ u + y) > 1e-9 * scale:
        return -math.inf
    conj = fam.conjugate(u / cl, idx)
    if not np.all(np.isfinite(conj)):
        return -math.inf
    return float(-np.sum(cl * conj) - u @ b)


def glm_oracle(inst: ProblemInstance, y_lin, x_in, eps_or: float, max_iter: int = 200,
               stall: int = 10) -> OracleResult:
    """Minimize ``G(x) = <y, x> + sum_i c_i f_i(<a_i, x> - b_i)`` to relative accuracy ``eps_or``.

    Damped Newton with Armijo backtracking.  Stops when the certified gap
    ``G(x) - LB`` is at most ``eps_or * (G(x_in) - G(x))`` (which implies
    the relative contract), or on a small Newton decrement, or when the
    best value stops improving for ``stall`` iterations.
    """
    if not eps_or > 0:
        raise ConfigError("oracle accuracy must be strictly positive")
    fam = inst.family
    c = inst.multipliers
    A, b = inst.A, inst.b
    n = inst.n
    y = np.zeros(n) if y_lin is None else np.asarray(y_lin, dtype=float)
    x = np.asarray(x_in, dtype=float).copy()
    pinvA = np.linalg.pinv(A[c > 0]) if np.any(c > 0) else np.zeros((n, 0))

    live = c > 0
    if np.any(live):
        Al = A[live]
        null_part = y - Al.T @ (pinvA.T @ y)
    else:
        null_part = y
    if np.linalg.norm(null_part) > 1e-10 * max(np.linalg.norm(y), 1e-300) and np.linalg.norm(y) > 0:
        raise UnboundedError("linear term has a component in the null space of the rows")

    def G(z):
        return float(y @ z + c @ fam.value(A @ z - b))

    g0 = G(x)
    # magnitude of G near x_in; the floors below are relative to it
    mag = abs(g0) + float(c @ fam.value(A @ x - b)) + 1e-300
    best = g0
    best_at = 0
    scale0 = np.linalg.norm(x) + 1.0
    lb = -math.inf
    reason = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        r = A @ x - b
        d1 = c * _first(fam, r)
        floor = 1e-12 * (1.0 + np.max(np.abs(r)))
        rs = np.where(np.abs(r) < floor, floor, r)
        curv = fam.deriv2(rs)
        with np.errstate(divide="ignore", invalid="ignore"):
            secant = np.abs(_first(fam, rs) / rs)
        d2 = c * np.maximum(np.nan_to_num(curv, posinf=0.0), 1e-2 * np.nan_to_num(secant))
        grad = y + A.T @ d1
        H = A.T @ (d2[:, None] * A)
        lam_reg = 1e-12 * max(np.trace(H), 1e-300) / n
        H[np.diag_indices(n)] += lam_reg
        try:
            step = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        gx = G(x)
        slope = float(grad @ step)
        dec = -slope
        lb = dual_lower_bound(inst, x, y, pinvA)
        progress = g0 - gx
        if math.isfinite(lb) and gx - lb <= eps_or * progress:
            reason = "gap"
            break
        if math.isfinite(lb) and gx - lb <= 1e-15 * (abs(gx) + mag):
            reason = "gap_floor"
            break
        if not math.isfinite(lb) and dec / 2 <= eps_or * max(progress, 0.0) / 4:
            reason = "decrement"
            break
        if dec <= 1e-30 * (abs(gx) + mag):
            reason = "decrement_floor"
            break
        t = 1.0
        accepted = False
        for _ in range(60):
            xn = x + t * step
            gn = G(xn)
            if gn <= gx + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            reason = "line_search"
            break
        x = xn
        if np.linalg.norm(x) > 1e12 * scale0 and gn < gx:
            raise UnboundedError("iterates diverge while the objective keeps decreasing")
        if best - gn > eps_or * max(g0 - gn, 0.0) / 4:
            best, best_at = gn, it
        elif it - best_at >= stall:
            reason = "stagnation"
            break
    val = G(x)
    if not math.isfinite(lb):
        lb = dual_lower_bound(inst, x, y, pinvA)
    certified = math.isfinite(lb) and (val - lb <= eps_or * (g0 - val) or
                                       val - lb <= 1e-15 * (abs(val) + mag))
    return OracleResult(x, val, lb, it, certified, reason)


def _first(fam, r, idx=None):
    """Derivative, with the subgradient 0 at a kink at the origin."""
    if isinstance(fam, (PowerLoss, GammaLoss)) and fam.p <= 1.0:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.nan_to_num(fam.deriv(np.where(r == 0, 1.0, r), idx) * (r != 0))
    return fam.deriv(r, idx)


# refinement ------------------------------------------------------------------------------

@dataclass
class RefinementConfig:
    alpha: float
    theta: float
    c: float
    kappa: float = 1.0

    def __post_init__(self):
        if not self.theta > 1:
            raise UnsupportedError("refinement needs theta > 1")

    @property
    def eta(self) -> float:
        return (10.0 * self.alpha**2 / self.c) ** (-1.0 / (self.theta - 1.0))

    def tau(self, Gamma: float, delta: float) -> int:
        if delta >= Gamma:
            return 1
        return max(1, int(math.ceil(2.0 / self.eta * (math.log(Gamma) - math.log(delta)))))


def _refinable(family):
    if not isinstance(family, (PowerLoss, GammaLoss)):
        raise UnsupportedError(f"refinement is not available for loss kind {family.kind!r}")
    if not 1.0 < family.p <= 2.0:
        raise UnsupportedError(f"refinement needs p in (1, 2], got {family.p}")
    return family.p


def refinement_config(family) -> RefinementConfig:
    p = _refinable(family)
    kappa, alpha = surrogate_constants(p)
    return RefinementConfig(alpha=alpha, theta=p, c=1.0, kappa=kappa)


@dataclass
class IterateInfo:
    x: np.ndarray
    F: float
    step: float
    accepted: bool
    support: int
    sparsified: bool
    fallback: bool
    oracle_iterations: int
    oracle_certified: bool


def _surrogate_weights(inst, y, Gamma_t, rc, mode, seed, eps_sp=0.1):
    """Row weights ``w`` of the (possibly sparsified) surrogate ``sum_i w_i c_i r_i``.

    Returns ``(w, sparsified, fallback)``; ``w`` is relative to the
    instance multipliers.
    """
    m, n = inst.m, inst.n
    dense = (np.ones(m), False, False)
    if mode is False or Gamma_t <= 0:
        return dense
    budget_floor = n * eps_sp**-2 * math.log2(max(m, 2)) ** 3
    if mode == "auto" and budget_floor >= m:
        return dense
    T = surrogate_thresholds(inst.family, y)
    sur = ProblemInstance(inst.A, GammaLoss(inst.family.p, T), None, inst.multipliers * rc.kappa)
    cfg = SparsifyConfig(eps_sp, Gamma_t / m**3, Gamma_t * m**3, seed, audit=False)
    try:
        model = sparsify(sur, cfg)
        rep = audit_sparsifier(sur, model, n_dirs=16, n_scales=8, seed=seed)
    except Exception:  # noqa: BLE001 - any sparsifier failure means a dense step
        return np.ones(m), False, True
    if rep.max_rel_error > eps_sp:
        return np.ones(m), False, True
    w = np.zeros(m)
    w[model.indices] = model.weights / sur.multipliers[model.indices]
    return w, True, False


def glm_iterate(inst: ProblemInstance, x, Gamma_t: float, rc: RefinementConfig | None = None,
                sparsify_mode="auto", seed: int = 0, steps=None) -> IterateInfo:
    """One refinement step from ``x`` with error estimate ``Gamma_t``."""
    if rc is None:
        rc = refinement_config(inst.family)
    fam = inst.family
    x = np.asarray(x, dtype=float)
    y = inst.residuals(x)
    Fx = float(inst.value(x))
    c = inst.multipliers
    fprime = fam.deriv(y)
    grad = inst.A.T @ (c * fprime)
    w, sparsified, fallback = _surrogate_weights(inst, y, Gamma_t, rc, sparsify_mode, seed)
    k = 2.0 / (3.0 * rc.alpha)
    keep = np.flatnonzero(w > 0)
    mult = k * c[keep] * w[keep]
    sub = ProblemInstance(inst.A[keep], fam.take(keep), -y[keep], mult)
    y_lin = grad - inst.A[keep].T @ (mult * fprime[keep])
    eta = rc.eta
    res = glm_oracle(sub, y_lin, np.zeros(inst.n), eta / (30.0 * rc.alpha))
    d = res.x
    if steps is None:
        kmax = int(math.ceil(-math.log2(eta))) if eta < 1 else 0
        steps = sorted({min(1.0, eta * 2.0 ** (h / 2.0)) for h in range(2 * kmax + 1)} | {eta})
    best_t, best_F = 0.0, Fx
    for t in steps:
        Ft = float(inst.value(x + t * d))
        if Ft <= best_F:
            best_t, best_F = t, Ft
    accepted = best_t > 0 and best_F <= Fx
    xn = x + best_t * d if accepted else x
    return IterateInfo(xn, best_F if accepted else Fx, best_t, accepted, int(keep.size),
                       sparsified, fallback, res.iterations, res.certified)


@dataclass
class SolveReport:
    x: np.ndarray
    F: float
    lower_bound: float
    trace: list = field(default_factory=list)
    eta: float = 0.0
    tau: int = 0
    alpha: float = 1.0
    reason: str = ""

    @property
    def gap(self) -> float:
        return self.F - self.lower_bound

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "F": float(self.F),
            "lower_bound": float(self.lower_bound) if math.isfinite(self.lower_bound) else None,
            "gap": float(self.gap) if math.isfinite(self.gap) else None,
            "eta": float(self.eta),
            "tau": int(self.tau),
            "alpha": float(self.alpha),
            "reason": self.reason,
            "trace": self.trace,
        }


def solve_glm(inst: ProblemInstance, x0=None, Gamma: float | None = None,
              delta: float | None = None, rel_eps: float | None = None,
              max_iter: int | None = None, sparsify_mode="auto", seed: int = 0,
              max_rejects: int = 5) -> SolveReport:
    """Refinement loop with the error schedule ``(1 - eta/2)^T Gamma``.

    Stops early once the certified gap ``F - LB`` is at most ``delta`` (or at
    most ``rel_eps * LB``); ``tau`` caps the number of steps.
    """
    rc = refinement_config(inst.family)
    x = np.zeros(inst.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    Fx = float(inst.value(x))
    if Gamma is None:
        Gamma = Fx
    if delta is None:
        delta = 0.0 if rel_eps is not None else 1e-8 * Gamma
    eta = rc.eta
    tau = rc.tau(Gamma, delta) if delta > 0 else rc.tau(Gamma, 1e-300 + 1e-16 * Gamma)
    pinvA = np.linalg.pinv(inst.A)
    lb = dual_lower_bound(inst, x, None, pinvA)
    report = SolveReport(x, Fx, lb, [], eta, tau, rc.alpha)
    if delta >= Gamma and rel_eps is None:
        report.tau = 1
        report.reason = "delta>=Gamma"
        return report
    cap = tau if max_iter is None else min(tau, max_iter)
    rejects = 0

    def done(F, lb):
        if not math.isfinite(lb):
            return False
        gap = F - lb
        if gap <= delta:
            return True
        return rel_eps is not None and gap <= rel_eps * max(lb, 0.0)

    reason = "tau"
    for T in range(cap):
        if done(Fx, lb):
            reason = "certified"
            break
        sched = (1.0 - eta / 2.0) ** T * Gamma
        gap = Fx - lb if math.isfinite(lb) else math.inf
        Gt = min(sched, gap)
        info = glm_iterate(inst, x, Gt, rc, sparsify_mode, seed * 100003 + T)
        improved = info.accepted and info.F < Fx
        if info.accepted:
            x, Fx = info.x, info.F
        rejects = 0 if improved else rejects + 1
        lb = max(lb, dual_lower_bound(inst, x, None, pinvA))
        report.trace.append({
            "iter": T, "F": Fx, "step": info.step, "accepted": info.accepted,
            "support": info.support, "sparsified": info.sparsified,
            "fallback": info.fallback, "oracle_iterations": info.oracle_iterations,
            "gap": (Fx - lb) if math.isfinite(lb) else None, "Gamma_t": Gt,
        })
        if rejects >= max_rejects:
            reason = "stalled"
            break
    else:
        if done(Fx, lb):
            reason = "certified"
    report.x, report.F, report.lower_bound, report.reason = x, Fx, lb, reason
    return report


# drivers -------------------------------------------------------------------------------

def solve_lp(A, b, p: float, eps: float, seed: int = 0, sparsify_mode="auto",
             max_iter: int | None = None) -> SolveReport:
    """``x`` with ``|Ax - b|_p^p <= (1 + eps) min``, certified by duality."""
    if not 1.0 < p <= 2.0:
        raise UnsupportedError(f"l_p regression needs p in (1, 2], got {p}")
    if not eps > 0:
        raise ConfigError("eps must be positive")
    inst = ProblemInstance(A, PowerLoss(p), b)
    Gamma = float(np.sum(np.abs(inst.b) ** p))
    if Gamma == 0:
        return SolveReport(np.zeros(inst.n), 0.0, 0.0, [], reason="b=0")
    return solve_glm(inst, None, Gamma, delta=1e-300, rel_eps=eps, seed=seed,
                     sparsify_mode=sparsify_mode, max_iter=max_iter)


@dataclass
class DualReport:
    y: np.ndarray
    objective: float
    x: np.ndarray
    K: float
    escalations: int
    penalty_residual: float
    feasibility: float
    eps0: float
    primal: SolveReport

    def to_dict(self):
        return {
            "y": [float(v) for v in self.y],
            "objective": float(self.objective),
            "x": [float(v) for v in self.x],
            "K": float(self.K),
            "escalations": int(self.escalations),
            "penalty_residual": float(self.penalty_residual),
            "feasibility": float(self.feasibility),
            "eps0": float(self.eps0),
            "primal": self.primal.to_dict(),
        }


def _project_affine(A, ybar, c, pinvA):
    y = ybar - pinvA.T @ (A.T @ ybar - c)
    for _ in range(2):
        r = A.T @ y - c
        if np.linalg.norm(r) <= 1e-13 * max(np.linalg.norm(c), 1e-300):
            break
        y = y - pinvA.T @ r
    return y


def solve_lp_dual(A, c, q: float, eps: float, seed: int = 0, max_escalations: int = 6):
    """``y`` with ``A^T y = c`` and ``|y|_q^q <= (1 + eps) min`` for ``q >= 2``.

    Solves the conjugate primal ``min |Ax|_p`` over ``<c, x> = 1`` through a
    penalty ``K |<c, x> - 1|^p``, maps the minimizer to the dual through the
    optimality conditions and projects onto the constraint.
    """
    if not q >= 2.0:
        raise UnsupportedError(f"dual l_q regression needs q >= 2, got {q}")
    if not eps > 0:
        raise ConfigError("eps must be positive")
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    c = np.asarray(c, dtype=float).reshape(-1)
    m, n = A.shape
    if c.shape != (n,):
        raise ConfigError(f"c must have length {n}")
    p = q / (q - 1.0)
    pinvA = np.linalg.pinv(A)
    if np.linalg.norm(A.T @ (pinvA.T @ c) - c) > 1e-10 * max(np.linalg.norm(c), 1e-300):
        raise InfeasibleError("c is not in the range of A^T")
    eps0 = (eps * m ** (1.0 / q - 0.5)) ** (2.0 * q / p)
    eps0 = min(max(eps0, 1e-13), 0.1)
    # operator-norm estimate for the starting penalty
    xs = np.linalg.svd(A, full_matrices=False)[2]
    op = max(np.sum(np.abs(A @ v) ** p) / np.sum(np.abs(v) ** p) for v in xs)
    K = 10.0 * op
    esc = 0
    while True:
        kp = K ** (1.0 / p)
        Aug = np.vstack([A, kp * c[None, :]])
        baug = np.concatenate([np.zeros(m), [kp]])
        rep = solve_lp(Aug, baug, p, eps0, seed=seed)
        xbar = rep.x
        resid = abs(float(c @ xbar) - 1.0)
        if resid <= 1e-9 or esc >= max_escalations:
            break
        K *= 10.0
        esc += 1
    cx = float(c @ xbar)
    if cx == 0:
        raise InfeasibleError("penalized solution is orthogonal to c")
    xbar = xbar / cx
    Ax = A @ xbar
    norm_p = float(np.sum(np.abs(Ax) ** p))
    ybar = np.sign(Ax) * np.abs(Ax) ** (p - 1.0) / norm_p
    y = _project_affine(A, ybar, c, pinvA)
    feas = float(np.linalg.norm(A.T @ y - c) / max(np.linalg.norm(c), 1e-300))
    if feas > 1e-10:
        raise InfeasibleError(f"projection residual {feas:.3g} exceeds tolerance")
    obj = float(np.sum(np.abs(y) ** q))
    return DualReport(y, obj, xbar, K, esc, resid, feas, eps0, rep)


@dataclass
class HuberReport:
    x: np.ndarray
    F: float
    sparse_F: float
    support: int
    model: object
    oracle: OracleResult

    def to_dict(self):
        return {
            "x": [float(v) for v in self.x],
            "F": float(self.F),
            "sparse_F": float(self.sparse_F),
            "support": int(self.support),
            "oracle_iterations": int(self.oracle.iterations),
            "oracle_certified": bool(self.oracle.certified),
            "model": self.model.to_dict(),
        }


def solve_huber(A, b, eps: float, seed: int = 0, eps_or: float = 1e-10) -> HuberReport:
    """Approximate Huber regression through a globally valid sparsifier."""
    inst = ProblemInstance(A, huber(1.0), b)
    m = inst.m
    if not (1.0 / m < eps < 0.5):
        raise ConfigError(f"Huber driver needs 1/m < eps < 1/2, got eps={eps}, m={m}")
    cfg = SparsifyConfig(eps, 0.5, 8.0 * m**3, seed)
    model = huber_globalize(sparsify(inst, cfg), inst)
    sub = model.as_instance(inst)
    res = glm_oracle(sub, None, np.zeros(inst.n), eps_or)
    return HuberReport(res.x, float(inst.value(res.x)), res.value, model.support, model, res)

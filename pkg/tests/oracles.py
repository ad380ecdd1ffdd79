"""Independent reference computations used by the tests.

Nothing here imports the package under test: each oracle recomputes its
quantity from the defining formula by a different route.
"""

import numpy as np


def gamma_p(p, t, z):
    """Direct two-branch evaluation of the gamma-p loss."""
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    if t == 0:
        return az**p
    inner = 0.5 * p * t ** (p - 2.0) * z**2
    outer = az**p - (1.0 - 0.5 * p) * t**p
    return np.where(az <= t, inner, outer)


def gamma_p_second(p, t, z):
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    with np.errstate(divide="ignore"):
        outer = p * (p - 1.0) * az ** (p - 2.0)
    if t == 0:
        return outer
    return np.where(az <= t, p * t ** (p - 2.0), outer)


def _simpson(f, a, b, n=400):
    """Composite Simpson rule on ``[a, b]`` with ``n`` (even) panels."""
    x = np.linspace(a, b, n + 1)
    y = f(x)
    h = (b - a) / n
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def simpson_divergence(p, t, z0, delta, n=4000):
    """``int_0^delta (delta - s) f''(z0 + s) ds`` split at the kinks of ``f``."""
    if delta == 0:
        return 0.0
    lo, hi = sorted((0.0, delta))
    cuts = [lo, hi]
    for k in (-t, t):
        s = k - z0
        if lo < s < hi:
            cuts.append(s)
    cuts = sorted(cuts)
    sign = 1.0 if delta > 0 else -1.0
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 0:
            continue
        # pick the branch from the midpoint so rounding at a kink endpoint
        # cannot evaluate the neighbouring branch
        inside = abs(z0 + 0.5 * (a + b)) <= t

        def h2(s, inside=inside):
            z = np.abs(z0 + s)
            if inside:
                return np.full_like(z, p * t ** (p - 2.0))
            with np.errstate(divide="ignore"):
                return p * (p - 1.0) * z ** (p - 2.0)

        total += _simpson(lambda s: (delta - s) * h2(s), a, b, n)
    return sign * total


def leverage_by_inverse(A, w):
    """``sigma_i = w_i a_i^T (A^T W A)^{-1} a_i`` through an explicit inverse."""
    A = np.asarray(A, dtype=float)
    M = A.T @ (w[:, None] * A)
    Minv = np.linalg.inv(M)
    tau = np.einsum("ij,jk,ik->i", A, Minv, A)
    return w * tau, tau


def lp_dual_bound(A, b, p, x):
    """Fenchel lower bound for ``min |Ax - b|_p^p`` built from the residual at ``x``."""
    r = A @ x - b
    u = p * np.sign(r) * np.abs(r) ** (p - 1.0)
    Q, _ = np.linalg.qr(A)
    u = u - Q @ (Q.T @ u)  # now A^T u = 0
    q = p / (p - 1.0)
    conj = (p - 1.0) * (np.abs(u) / p) ** q
    return -conj.sum() - u @ b


def irls_lp(A, b, p, gap_tol=1e-12, max_iter=20000):
    """Reference ``l_p`` regression by iteratively reweighted least squares.

    Returns ``(x, value, lower_bound)``; iterates until the duality gap is
    below ``gap_tol`` relative to the value.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    val = np.sum(np.abs(A @ x - b) ** p)
    lb = lp_dual_bound(A, b, p, x)
    for _ in range(max_iter):
        r = A @ x - b
        wts = np.maximum(np.abs(r), 1e-300) ** (p - 2.0)
        wts = np.minimum(wts, 1e200)
        sw = np.sqrt(wts)
        x_new = np.linalg.lstsq(sw[:, None] * A, sw * b, rcond=None)[0]
        val_new = np.sum(np.abs(A @ x_new - b) ** p)
        if val_new > val:
            break
        x, val = x_new, val_new
        lb = max(lb, lp_dual_bound(A, b, p, x))
        if val - lb <= gap_tol * val:
            break
    return x, val, lb


def normal_equations(A, b):
    A = np.asarray(A, dtype=float)
    return np.linalg.solve(A.T @ A, A.T @ b)


def cvxpy_dual_lq(A, c, q):
    """``min |y|_q^q`` subject to ``A^T y = c`` with a generic conic solver."""
    import cvxpy as cp

    y = cp.Variable(A.shape[0])
    prob = cp.Problem(cp.Minimize(cp.sum(cp.power(cp.abs(y), q))), [A.T @ y == c])
    prob.solve()
    return y.value, prob.value


def cvxpy_huber(A, b, t=1.0):
    """Dense Huber regression; cvxpy's ``huber`` is twice the quadratic-start convention."""
    import cvxpy as cp

    x = cp.Variable(A.shape[1])
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum(cp.huber(A @ x - b, t))))
    prob.solve()
    return x.value, prob.value

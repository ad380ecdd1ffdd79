"""Acceptance checks, one test group per criterion.

Each test carries ``@pytest.mark.criterion(k)``; the terminal summary prints
one PASS/FAIL line per criterion together with the measured quantities.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from glms import (
    GammaLoss,
    PowerLoss,
    ProblemInstance,
    SparsifyConfig,
    audit_sparsifier,
    certify_properties,
    eval_divergence,
    find_weights,
    huber,
    huber_globalize,
    initial_weights,
    leverage_exact,
    leverage_sketch,
    solve_glm,
    solve_lp,
    solve_lp_dual,
    sparsify,
    sparsify_once,
)
from glms.io import make_instance
from glms.linalg import log_ratio_distance
from glms.solve import refinement_config
from glms.sparsify import audit_points, weight_scheme_for, scale_range

# ---------------------------------------------------------------- criterion 1


@pytest.mark.criterion(1)
def test_gamma_certification_grid(note):
    t0 = time.perf_counter()
    failures = []
    for p in (1.0, 1.25, 1.5, 2.0):
        for t in (0.1, 1.0, 10.0):
            cert = certify_properties(GammaLoss(p, t), tol=1e-9)
            for name in ("auto_lipschitz", "lower_homogeneous"):
                chk = cert.checks[name]
                if not chk.passed:
                    failures.append((p, t, name, chk.worst_ratio, chk.witness))
    elapsed = time.perf_counter() - t0
    note(f"12 certifications in {elapsed:.3f} s")
    assert not failures, failures
    assert elapsed < 1.0


# ---------------------------------------------------------------- criterion 2


@pytest.mark.criterion(2)
def test_divergence_matches_simpson(note):
    t0 = time.perf_counter()
    fam = GammaLoss(1.5, 1.0)
    grid = np.linspace(-5.0, 5.0, 32)  # 32 x 32 = 1024 pairs, both kinks crossed
    err = 0.0
    for z0 in grid:
        for d in grid:
            ref = oracles.simpson_divergence(1.5, 1.0, z0, d)
            err = max(err, abs(eval_divergence(fam, 0, z0, d) - ref))
    elapsed = time.perf_counter() - t0
    note(f"max abs error {err:.2e} over 1024 points, {elapsed:.2f} s")
    assert err <= 1e-8
    assert elapsed < 5.0


# ---------------------------------------------------------------- criterion 3


def _random_instances(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(1, 21))
        m = int(rng.integers(n, 501))
        r = n if rng.random() < 0.7 else int(rng.integers(1, n + 1))
        A = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
        w = rng.uniform(0.1, 10.0, m)
        yield A, w, np.linalg.matrix_rank(A)


@pytest.mark.criterion(3)
def test_leverage_sums_to_rank(note):
    worst = 0.0
    for A, w, rank in _random_instances(100, 3):
        sigma, _ = leverage_exact(A, w)
        dev = abs(sigma.sum() - rank) / A.shape[1]
        worst = max(worst, dev)
    note(f"max |sum sigma - rank| / n = {worst:.2e}")
    assert worst <= 1e-8


@pytest.mark.criterion(3)
def test_leverage_sketch_accuracy(note):
    rng = np.random.default_rng(33)
    good = 0
    for seed in range(100):
        n = int(rng.integers(1, 21))
        m = int(rng.integers(n, 501))
        A = rng.standard_normal((m, n))
        w = rng.uniform(0.1, 10.0, m)
        exact, _ = leverage_exact(A, w)
        approx = leverage_sketch(A, w, 0.1, seed=seed)
        ratio = approx / exact
        if np.all(ratio >= 1 / 1.1) and np.all(ratio <= 1.1):
            good += 1
    note(f"{good}/100 sketches within [1/1.1, 1.1]")
    assert good >= 95


# ---------------------------------------------------------------- criterion 4


@pytest.mark.criterion(4)
@pytest.mark.parametrize("p", [1.0, 1.25, 1.5, 2.0])
def test_identity_weights_closed_form(p, note):
    n, jmin, jmax = 5, -4, 4
    A = np.eye(n)
    fam = PowerLoss(p)
    w0 = np.full(n, 2.0 ** (-2 * jmax / p)) * 3.0  # off the fixed point
    scheme = find_weights(A, fam, jmin, jmax, w0)
    err = 0.0
    for j in range(jmin, jmax + 1):
        expect = 2.0 ** (-2.0 * j / p)
        err = max(err, float(np.max(np.abs(scheme.weight(j) / expect - 1))))
    note(f"p={p}: max relative error vs s^(-2/p) = {err:.1e}")
    assert err <= 1e-6


def _scheme_audit(A, fam, scheme, mult=None):
    """Largest log-violation of the per-scale bracket and the adjacent-scale ratio."""
    worst = 0.0
    for j in range(scheme.jmin, scheme.jmax + 1):
        w = scheme.weight(j)
        _, tau = oracles.leverage_by_inverse(A, w)
        fv = fam.value(np.sqrt(tau))
        if mult is not None:
            fv = mult * fv
        ratio = fv / (w * tau) / 2.0**j
        worst = max(worst, float(np.max(np.abs(np.log(ratio)))))
    W = scheme.weights
    smooth = float(np.max(W[1:] / W[:-1]))
    return worst, smooth


@pytest.mark.criterion(4)
def test_random_schemes_pass_audit(note):
    rng = np.random.default_rng(44)
    worst_gap = -np.inf
    for k in range(20):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(3 * n, 120))
        A = rng.standard_normal((m, n))
        p = float(rng.choice([1.0, 1.25, 1.5, 2.0]))
        kind = ["power", "gamma", "huber"][k % 3]
        fam = {"power": PowerLoss(p), "gamma": GammaLoss(p, float(rng.uniform(0.1, 3))),
               "huber": huber(1.0)}[kind]
        jmin, jmax = -6, 10
        w0, pert, beta = initial_weights(A, fam, 2.0**jmax, delta_pert=1e-6, seed=k)
        scheme = find_weights(A, pert, jmin, jmax, w0, beta, seed=k)
        bracket, smooth = _scheme_audit(A, pert, scheme)
        la = math.log(scheme.alpha)
        assert bracket <= la + 1e-9, (k, kind, p, bracket, la)
        assert smooth <= scheme.alpha * (1 + 1e-12), (k, kind, p, smooth, scheme.alpha)
        worst_gap = max(worst_gap, bracket - la)
    note(f"20 schemes audited; max(log bracket - log alpha) = {worst_gap:.2e}")


# ---------------------------------------------------------------- criterion 5


@pytest.mark.criterion(5)
def test_tau_map_is_nonexpansive(note):
    rng = np.random.default_rng(55)
    worst = -np.inf
    for _ in range(200):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(n, 60))
        A = rng.standard_normal((m, n))
        w = np.exp(rng.uniform(-3, 3, m))
        w2 = w * np.exp(rng.uniform(-1, 1, m) * rng.uniform(0, 2))
        tw = leverage_exact(A, w)[1]
        tw2 = leverage_exact(A, w2)[1]
        slack = log_ratio_distance(tw, tw2) - log_ratio_distance(w, w2)
        worst = max(worst, slack)
        assert slack <= 1e-10
    note(f"max d(tau(w), tau(w')) - d(w, w') = {worst:.2e}")


# ---------------------------------------------------------------- criteria 6, 7

FAMILIES = {
    "l1.5": lambda: PowerLoss(1.5),
    "l2": lambda: PowerLoss(2.0),
    "huber": lambda: huber(1.0),
    "gamma1.5": lambda: GammaLoss(1.5, 1.0),
}
KINDS = ("gaussian", "near-duplicate")
_SPARSE_CACHE = {}


def _sparsified(fam_name, kind):
    key = (fam_name, kind)
    if key not in _SPARSE_CACHE:
        A, _, _ = make_instance(kind, 400, 6, seed=6)
        inst = ProblemInstance(A, FAMILIES[fam_name]())
        cfg = SparsifyConfig(0.15, 1.0, 1e6, seed=6)
        t0 = time.perf_counter()
        model = sparsify(inst, cfg)
        rep = audit_sparsifier(inst, model, seed=606)
        _SPARSE_CACHE[key] = (inst, model, rep, time.perf_counter() - t0)
    return _SPARSE_CACHE[key]


@pytest.mark.criterion(6)
@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("fam_name", list(FAMILIES))
def test_sparsifier_accuracy(fam_name, kind, note):
    inst, model, rep, elapsed = _sparsified(fam_name, kind)
    note(f"max rel error {rep.max_rel_error:.4f}, doublings {model.stats['doublings']}, "
         f"support {model.support}/{inst.m}, {elapsed:.1f} s")
    assert model.stats["doublings"] <= 3
    assert rep.n_points > 0
    assert rep.max_rel_error <= 0.15


@pytest.mark.criterion(6)
def test_sparsifier_unbiased(note):
    A, _, _ = make_instance("gaussian", 400, 6, seed=6)
    inst = ProblemInstance(A, PowerLoss(1.5))
    jmin, jmax = scale_range(1.0, 1e6, inst.m)
    scheme = weight_scheme_for(inst, jmin, jmax, 0.15, 1.0, seed=6)
    cfg = SparsifyConfig(0.15, 1.0, 1e6, seed=61, budget=100)  # small budget, large variance
    rng = np.random.default_rng(62)
    X = rng.standard_normal((6, 3)) * np.array([0.1, 1.0, 10.0])
    F = inst.value(X)
    draws = np.empty((10_000, 3))
    for k in range(10_000):
        model = sparsify_once(inst, scheme, cfg, stream=k)
        draws[k] = model.value(inst, X)
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    z = np.abs(mean - F) / se
    note(f"|mean - F| / SE at 3 probes: {np.array2string(z, precision=2)}")
    assert np.all(z <= 3.0)


@pytest.mark.criterion(7)
@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("fam_name", list(FAMILIES))
def test_sensitivity_sum(fam_name, kind, note):
    inst, model, rep, _ = _sparsified(fam_name, kind)
    top = max(rep.sensitivity_sums)
    note(f"max shell sum {top:.3f} (C_xi = {rep.C_xi:.3f}) over {len(rep.scales)} shells")
    assert all(s <= 20 * inst.n for s in rep.sensitivity_sums)


# ---------------------------------------------------------------- criterion 8


@pytest.mark.criterion(8)
def test_huber_global_outside_range(note):
    m, n, eps = 400, 6, 0.15
    A, _, _ = make_instance("gaussian", m, n, seed=8)
    inst = ProblemInstance(A, huber(1.0))
    cfg = SparsifyConfig(eps, 0.5, 8.0 * m**3, seed=8)
    model = huber_globalize(sparsify(inst, cfg), inst)
    assert model.is_global
    rng = np.random.default_rng(88)
    X, kept = [], 0
    while kept < 10:
        x = rng.standard_normal(n)
        F1 = inst.value(x)
        if kept < 5:
            x = x * math.sqrt(0.25 / F1) * rng.uniform(1e-3, 1)  # below s_min, quadratic regime
        else:
            x = x * (10 * m**3 / F1) * rng.uniform(1, 1e3)  # above s_max, linear regime
        F = inst.value(x)
        assert F < 0.5 or F > 8.0 * m**3
        X.append(x)
        kept += 1
    rel, _, _ = audit_points(inst, model, np.array(X).T)
    note(f"max rel error outside [1/2, 8m^3]: {rel.max():.4f} (bound {2 * eps})")
    assert np.all(rel <= 2 * eps)


# ---------------------------------------------------------------- criterion 9


@pytest.mark.criterion(9)
def test_lp2_matches_normal_equations(note):
    A, b, _ = make_instance("gaussian", 100, 5, seed=9)
    rep = solve_lp(A, b, 2.0, 1e-10, seed=9)
    x_ref = oracles.normal_equations(A, b)
    F_ref = float(np.sum((A @ x_ref - b) ** 2))
    rel = abs(rep.F - F_ref) / F_ref
    note(f"relative objective error {rel:.1e}")
    assert rel <= 1e-8


@pytest.mark.criterion(9)
@pytest.mark.parametrize("p", [1.3, 1.5])
def test_lp_refinement(p, note):
    t0 = time.perf_counter()
    rng = np.random.default_rng(int(p * 10))
    A = rng.standard_normal((100, 5))
    b = A @ rng.standard_normal(5) + rng.standard_normal(100)
    _, F_ref, lb_ref = oracles.irls_lp(A, b, p, gap_tol=1e-12)
    assert F_ref - lb_ref <= 1e-12 * F_ref
    inst = ProblemInstance(A, PowerLoss(p), b)
    Gamma = inst.value(np.zeros(5))
    rep = solve_glm(inst, Gamma=Gamma, delta=1e-8 * Gamma, seed=9)
    ratio = rep.F / F_ref
    # per accepted step log-error decrease, errors measured against the reference
    floor = 1e-13 * F_ref
    errs = [max(Gamma - F_ref, floor)]
    dec = []
    for row in rep.trace:
        e = max(row["F"] - F_ref, floor)
        if row["accepted"]:
            dec.append(math.log(errs[-1] / e))
        errs.append(e)
    avg = float(np.mean(dec)) if dec else 0.0
    eta = refinement_config(inst.family).eta
    elapsed = time.perf_counter() - t0
    note(f"p={p}: F/F_ref - 1 = {ratio - 1:.1e}, {len(dec)} accepted steps, "
         f"mean log-decrease {avg:.3f} vs eta/4 = {eta / 4:.2e}, {elapsed:.1f} s")
    assert ratio <= 1 + 1e-6
    assert avg >= eta / 4
    assert all(r2["F"] <= r1["F"] for r1, r2 in zip(rep.trace, rep.trace[1:]))
    assert elapsed < 60


# ---------------------------------------------------------------- criterion 10


def _feas(A, y, c):
    return np.linalg.norm(A.T @ y - c) / np.linalg.norm(c)


@pytest.mark.criterion(10)
def test_dual_two_rows(note):
    A = np.array([[1.0], [1.0]])
    rep = solve_lp_dual(A, np.array([1.0]), 2.0, 1e-6, seed=10)
    note(f"y = {rep.y.tolist()}")
    np.testing.assert_allclose(rep.y, [0.5, 0.5], rtol=0, atol=1e-12)
    assert _feas(A, rep.y, np.array([1.0])) <= 1e-10


@pytest.mark.criterion(10)
def test_dual_random_q3(note):
    rng = np.random.default_rng(10)
    A = rng.standard_normal((100, 4))
    c = rng.standard_normal(4)
    rep = solve_lp_dual(A, c, 3.0, 0.01, seed=10)
    _, ref = oracles.cvxpy_dual_lq(A, c, 3.0)
    val = float(np.sum(np.abs(rep.y) ** 3))
    note(f"|y|_3^3 / reference = {val / ref:.6f}, feasibility {_feas(A, rep.y, c):.1e}")
    assert _feas(A, rep.y, c) <= 1e-10
    assert val <= 1.01 * ref


@pytest.mark.criterion(10)
def test_dual_feasibility_always(note):
    rng = np.random.default_rng(101)
    worst = 0.0
    for k in range(20):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(n + 1, 80))
        A = rng.standard_normal((m, n)) * 10.0 ** rng.uniform(-3, 3)
        c = rng.standard_normal(n)
        q = float(rng.choice([2.0, 2.5, 3.0, 4.0]))
        rep = solve_lp_dual(A, c, q, 0.05, seed=k)
        worst = max(worst, _feas(A, rep.y, c))
    note(f"max relative |A^T y - c| over 20 instances: {worst:.1e}")
    assert worst <= 1e-10


# ---------------------------------------------------------------- criterion 11


def _glms(*args, cwd):
    cmd = [sys.executable, "-m", "glms.cli", *map(str, args)]
    return subprocess.run(cmd, cwd=cwd, capture_output=True, text=True)


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    r = _glms("gen", "--kind", "gaussian", "--m", 120, "--n", 4, "--seed", 1,
              "--outdir", "inst", "--out", "gen.json", cwd=d)
    assert r.returncode == 0, r.stderr
    with open(d / "c.csv", "w") as fh:
        fh.write("1.0\n-0.5\n0.25\n2.0\n")
    loss = json.dumps({"kind": "gamma-p", "p": 1.5, "t": 1.0})
    runs = {
        "gen": ["gen", "--kind", "near-duplicate", "--m", 50, "--n", 3, "--seed", 2,
                "--outdir", "inst2"],
        "sparsify": ["sparsify", "--matrix", "inst/A.mtx", "--loss", loss, "--eps", 0.2,
                     "--smin", 1, "--smax", 1e4, "--seed", 3],
        "weights": ["weights", "--matrix", "inst/A.mtx", "--loss", loss, "--smin", 1,
                    "--smax", 1e3, "--seed", 4],
        "solve": ["solve", "--matrix", "inst/A.mtx", "--rhs", "inst/b.csv", "--loss", "lp",
                  "--p", 1.5, "--eps", 1e-8, "--seed", 5],
        "solve-dual": ["solve-dual", "--matrix", "inst/A.mtx", "--c", "c.csv", "--q", 3,
                       "--eps", 0.01, "--seed", 6],
        "certify-loss": ["certify-loss", "--loss", loss],
    }
    outputs = {}
    for name, args in runs.items():
        out = f"{name}.json"
        r = _glms(*args, "--out", out, cwd=d)
        assert r.returncode == 0, (name, r.stderr)
        outputs[name] = out
    # audit needs the sparsify output
    r = _glms("audit", "--matrix", "inst/A.mtx", "--loss", loss, "--model", "sparsify.json",
              "--seed", 7, "--out", "audit.json", cwd=d)
    assert r.returncode in (0, 4), r.stderr
    outputs["audit"] = "audit.json"
    return d, outputs


@pytest.mark.criterion(11)
@pytest.mark.parametrize("command", ["gen", "sparsify", "audit", "weights", "solve",
                                     "solve-dual", "certify-loss"])
def test_cli_replay_identical(command, cli_runs, note):
    d, outputs = cli_runs
    out = outputs[command]
    base = (d / out).read_bytes()
    for threads in (1, 2, 8):
        replay = f"{command}.replay{threads}.json"
        r = _glms("replay", "--manifest", f"{out}.manifest.json", "--threads", threads,
                  "--out", replay, cwd=d)
        assert r.returncode in (0, 4), r.stderr
        assert (d / replay).read_bytes() == base, (command, threads)
    note(f"{command}: byte-identical at 1, 2, 8 threads ({len(base)} bytes)")

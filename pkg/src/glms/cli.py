"""``glms`` command line.

Every command writes its result JSON to ``--out`` and a run manifest next
to it (``<out>.manifest.json``).  ``glms replay --manifest M`` re-runs a
manifest.  Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 failed audit.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from ._parallel import set_threads, single_threaded_blas
from .errors import AuditFailure, ConfigError, GLMSError
from .instance import ProblemInstance
from .io import (
    GENERATOR_KINDS,
    RunManifest,
    file_sha256,
    generate_instance,
    load_instance,
    parse_loss,
    read_matrix,
    read_vector,
    write_json,
)
from .losses import GammaLoss, PowerLoss, certify_properties
from .solve import solve_glm, solve_huber, solve_lp, solve_lp_dual
from .sparsify import (
    SparsifiedModel,
    SparsifyConfig,
    audit_sparsifier,
    huber_globalize,
    scale_range,
    sparsify,
)
from .weights import find_weights, initial_weights

INPUT_KEYS = ("matrix", "shift", "rhs", "model", "c")


class _Timer:
    def __init__(self):
        self.timings = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[name] = time.perf_counter() - self.t

        return _Ctx()


def _instance(args):
    return load_instance(args.matrix, args.shift, args.loss)


def cmd_sparsify(args, timer):
    with timer.stage("load"):
        inst = _instance(args)
    cfg = SparsifyConfig(args.eps, args.smin, args.smax, args.seed, rounds=args.rounds,
                         budget=args.budget, C_M=args.c_m)
    with timer.stage("sparsify"):
        model = sparsify(inst, cfg)
        if args.globalize:
            model = huber_globalize(model, inst)
    return model.to_dict(), 0


def cmd_audit(args, timer):
    with timer.stage("load"):
        inst = _instance(args)
        with open(args.model) as fh:
            model = SparsifiedModel.from_dict(json.load(fh))
    if model.indices.size and model.indices.max() >= inst.m:
        raise ConfigError("model refers to rows beyond the matrix")
    smin = args.smin if args.smin is not None else model.smin
    smax = args.smax if args.smax is not None else model.smax
    with timer.stage("audit"):
        rep = audit_sparsifier(inst, model, args.n_dirs, args.n_scales, args.seed, smin, smax)
    out = rep.to_dict()
    out["eps"] = model.eps
    out["passed"] = bool(rep.max_rel_error <= model.eps)
    return out, 0 if out["passed"] else 4


def cmd_solve(args, timer):
    with timer.stage("load"):
        A = read_matrix(args.matrix)
        b = read_vector(args.rhs) if args.rhs else np.zeros(A.shape[0])
    with timer.stage("solve"):
        if args.loss == "lp":
            rep = solve_lp(A, b, args.p, args.eps, seed=args.seed)
        elif args.loss == "huber":
            rep = solve_huber(A, b, args.eps, seed=args.seed)
        else:
            inst = ProblemInstance(A, GammaLoss(args.p, args.threshold), b)
            rep = solve_glm(inst, rel_eps=args.eps, seed=args.seed)
    return rep.to_dict(), 0


def cmd_solve_dual(args, timer):
    with timer.stage("load"):
        A = read_matrix(args.matrix)
        c = read_vector(args.c)
    with timer.stage("solve"):
        rep = solve_lp_dual(A, c, args.q, args.eps, seed=args.seed)
    return rep.to_dict(), 0


def cmd_weights(args, timer):
    with timer.stage("load"):
        inst = _instance(args)
    if args.jmin is None or args.jmax is None:
        jmin, jmax = scale_range(args.smin, args.smax, inst.m)
    else:
        jmin, jmax = args.jmin, args.jmax
    with timer.stage("weights"):
        w0, pert, beta = initial_weights(inst.A, inst.family, 2.0**jmax,
                                         delta_pert=args.delta_pert, seed=args.seed)
        fam = inst.family if args.unperturbed else pert
        scheme = find_weights(inst.A, fam, jmin, jmax, w0, beta, seed=args.seed)
    out = scheme.to_dict()
    out["fixed_point_dist"] = [float(v) for v in scheme.fixed_point_dist]
    out["warmup"] = scheme.warmup
    out["beta"] = scheme.beta
    return out, 0


def cmd_certify(args, timer):
    fam = parse_loss(args.loss)
    with timer.stage("certify"):
        cert = certify_properties(fam, tol=args.tol)
    return cert.to_dict(), 0 if cert.passed else 4


def cmd_gen(args, timer):
    with timer.stage("generate"):
        paths = generate_instance(args.kind, args.m, args.n, args.seed, args.outdir)
    return {"kind": args.kind, "m": args.m, "n": args.n, "seed": args.seed, "files": paths}, 0


COMMANDS = {
    "sparsify": cmd_sparsify,
    "audit": cmd_audit,
    "solve": cmd_solve,
    "solve-dual": cmd_solve_dual,
    "weights": cmd_weights,
    "certify-loss": cmd_certify,
    "gen": cmd_gen,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glms", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"glms {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_required=True, out=True):
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
        if out:
            p.add_argument("--out", "--report", dest="out", required=True)
        p.add_argument("--manifest", default=None, help="manifest path (default <out>.manifest.json)")

    def instance_args(p):
        p.add_argument("--matrix", required=True)
        p.add_argument("--shift", default=None)
        p.add_argument("--loss", default='{"kind": "power-p", "p": 2}')

    p = sub.add_parser("sparsify", help="build a sparsified model")
    instance_args(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--smin", type=float, required=True)
    p.add_argument("--smax", type=float, required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--c-m", dest="c_m", type=float, default=1.0)
    p.add_argument("--globalize", action="store_true", help="Huber: mark valid for all x")
    common(p)

    p = sub.add_parser("audit", help="audit a sparsified model")
    instance_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--n-dirs", dest="n_dirs", type=int, default=64)
    p.add_argument("--n-scales", dest="n_scales", type=int, default=24)
    p.add_argument("--smin", type=float, default=None)
    p.add_argument("--smax", type=float, default=None)
    common(p)

    p = sub.add_parser("solve", help="l_p, Huber or gamma-p regression")
    p.add_argument("--matrix", required=True)
    p.add_argument("--rhs", default=None)
    p.add_argument("--loss", choices=("lp", "huber", "gamma"), default="lp")
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--eps", type=float, required=True)
    common(p)

    p = sub.add_parser("solve-dual", help="min |y|_q subject to A^T y = c")
    p.add_argument("--matrix", required=True)
    p.add_argument("--c", required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    common(p)

    p = sub.add_parser("weights", help="compute a weight scheme")
    instance_args(p)
    p.add_argument("--jmin", type=int, default=None)
    p.add_argument("--jmax", type=int, default=None)
    p.add_argument("--smin", type=float, default=1.0)
    p.add_argument("--smax", type=float, default=1e6)
    p.add_argument("--delta-pert", dest="delta_pert", type=float, default=1e-6)
    p.add_argument("--unperturbed", action="store_true")
    common(p)

    p = sub.add_parser("certify-loss", help="check growth properties of a loss")
    p.add_argument("--loss", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    common(p, seed_required=False)

    p = sub.add_parser("gen", help="write a synthetic instance")
    p.add_argument("--kind", choices=GENERATOR_KINDS, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--outdir", required=True)
    common(p)

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="override the output path")
    return ap


def _run(args) -> int:
    timer = _Timer()
    params = {k: v for k, v in vars(args).items() if k not in ("manifest", "threads")}
    set_threads(args.threads)
    with single_threaded_blas():
        result, code = COMMANDS[args.command](args, timer)
    write_json(result, args.out)
    inputs = {}
    for key in INPUT_KEYS:
        path = getattr(args, key, None)
        if path:
            try:
                inputs[key] = {"path": path, "sha256": file_sha256(path)}
            except OSError:
                pass
    manifest = RunManifest(args.command, params, getattr(args, "seed", None), inputs,
                           {"out": args.out}, __version__, timer.timings)
    manifest.timings["threads"] = args.threads
    manifest.save(args.manifest or args.out + ".manifest.json")
    return code


def _replay(args) -> int:
    man = RunManifest.load(args.manifest)
    if man.command not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {man.command!r}")
    ns = build_parser().parse_args([man.command, "--out", "x", "--seed", "0",
                                    *_required_stub(man.command)])
    for k, v in man.params.items():
        setattr(ns, k, v)
    for key, rec in man.inputs.items():
        if file_sha256(rec["path"]) != rec["sha256"]:
            raise ConfigError(f"input {rec['path']} changed since the manifest was written")
    ns.command = man.command
    ns.threads = args.threads if args.threads is not None else man.timings.get("threads", 1)
    if args.out is not None:
        ns.out = args.out
    ns.manifest = ns.out + ".manifest.json"
    return _run(ns)


def _required_stub(command):
    # placeholders so the parser accepts the namespace; overwritten from the manifest
    stubs = {
        "sparsify": ["--matrix", "-", "--eps", "0.1", "--smin", "1", "--smax", "2"],
        "audit": ["--matrix", "-", "--model", "-"],
        "solve": ["--matrix", "-", "--eps", "0.1"],
        "solve-dual": ["--matrix", "-", "--c", "-", "--q", "2", "--eps", "0.1"],
        "weights": ["--matrix", "-"],
        "certify-loss": ["--loss", "{}"],
        "gen": ["--kind", "gaussian", "--m", "1", "--n", "1", "--outdir", "-"],
    }
    return stubs[command]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return _replay(args)
        return _run(args)
    except GLMSError as exc:
        print(f"glms: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"glms: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

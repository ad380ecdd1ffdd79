"""File ingestion, JSON output, run manifests and synthetic instances."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.io
import scipy.sparse

from ._parallel import make_rng
from .errors import ConfigError
from .instance import ProblemInstance, lift_shift
from .losses import loss_from_dict

__all__ = [
    "read_matrix",
    "read_vector",
    "parse_loss",
    "load_instance",
    "lift_shift",
    "dumps",
    "write_json",
    "file_sha256",
    "RunManifest",
    "make_instance",
    "generate_instance",
    "GENERATOR_KINDS",
]


def read_matrix(path) -> np.ndarray:
    """Dense matrix from MatrixMarket (``.mtx``) or CSV (one row per line)."""
    path = os.fspath(path)
    try:
        if path.endswith((".mtx", ".mm")):
            M = scipy.io.mmread(path)
            if scipy.sparse.issparse(M):
                M = M.toarray()
            A = np.asarray(M, dtype=float)
        else:
            A = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix {path}: {exc}") from None
    if A.ndim != 2 or A.size == 0:
        raise ConfigError(f"matrix {path} is empty or not 2-d")
    return A


def read_vector(path) -> np.ndarray:
    """Vector from a single-column CSV (or a MatrixMarket column)."""
    path = os.fspath(path)
    if path.endswith((".mtx", ".mm")):
        v = read_matrix(path)
    else:
        try:
            v = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read vector {path}: {exc}") from None
    if v.ndim == 2 and min(v.shape) != 1 and v.size:
        raise ConfigError(f"{path} holds a matrix, expected a single column")
    return np.asarray(v, dtype=float).reshape(-1)


def parse_loss(desc):
    """Loss from a dict, a JSON string or a path to a JSON file."""
    if isinstance(desc, dict):
        return loss_from_dict(desc)
    text = desc
    if os.path.exists(desc):
        with open(desc) as fh:
            text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"loss description is not valid JSON: {exc}") from None
    return loss_from_dict(d)


def load_instance(matrix_path, shift_path=None, loss=None) -> ProblemInstance:
    A = read_matrix(matrix_path)
    b = None if shift_path is None else read_vector(shift_path)
    if b is not None and b.size != A.shape[0]:
        raise ConfigError(f"shift has length {b.size} but the matrix has {A.shape[0]} rows")
    fam = parse_loss(loss if loss is not None else {"kind": "power-p", "p": 2.0})
    return ProblemInstance(A, fam, b)


# JSON ------------------------------------------------------------------------------------

def _fmt_float(v: float) -> str:
    if not math.isfinite(v):
        return "null"
    s = "%.17g" % v
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _emit(obj, out, indent, level):
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = "," if indent is None else ","
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for k, (key, val) in enumerate(obj.items()):
            if k:
                out.append(sep)
            out.append(pad + json.dumps(str(key)) + ": ")
            _emit(val, out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            out.append("[]")
            return
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq)
        out.append("[")
        for k, val in enumerate(seq):
            if k:
                out.append(", " if flat or indent is None else sep)
            if not flat:
                out.append(pad)
            _emit(val, out, indent, level + 1)
        out.append("]" if flat else end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int | None = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    out = []
    _emit(obj, out, indent, 0)
    return "".join(out) + "\n"


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = ""
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        try:
            return cls(d["command"], dict(d["params"]), d.get("seed"), dict(d.get("inputs", {})),
                       dict(d.get("outputs", {})), d.get("version", ""),
                       dict(d.get("timings", {})))
        except KeyError as exc:
            raise ConfigError(f"manifest lacks field {exc}") from None

    def save(self, path) -> None:
        write_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from None


# generators ------------------------------------------------------------------------------

GENERATOR_KINDS = ("gaussian", "scale-separated", "near-duplicate", "outlier-regression")


def make_instance(kind: str, m: int, n: int, seed: int):
    """``(A, b, truth)`` for one of :data:`GENERATOR_KINDS`."""
    if kind not in GENERATOR_KINDS:
        raise ConfigError(f"unknown generator kind {kind!r}")
    if m < 1 or n < 1:
        raise ConfigError("m and n must be positive")
    rng = make_rng(seed, "generate", kind)
    x0 = rng.standard_normal(n)
    truth = {"kind": kind, "m": m, "n": n, "seed": seed, "x0": x0.tolist()}
    if kind == "gaussian":
        A = rng.standard_normal((m, n))
        b = A @ x0 + 0.1 * rng.standard_normal(m)
    elif kind == "scale-separated":
        A = rng.standard_normal((m, n))
        expo = rng.integers(-3, 4, size=m)
        A *= (10.0 ** expo)[:, None]
        b = A @ x0 + 0.1 * rng.standard_normal(m)
        truth["row_scale_exponents"] = expo.tolist()
    elif kind == "near-duplicate":
        half = (m + 1) // 2
        base = rng.standard_normal((half, n))
        A = np.repeat(base, 2, axis=0)[:m]
        A[1::2] += 1e-6 * rng.standard_normal(A[1::2].shape)
        b = A @ x0 + 0.1 * rng.standard_normal(m)
    else:
        A = rng.standard_normal((m, n))
        b = A @ x0 + 0.01 * rng.standard_normal(m)
        mask = rng.random(m) < 0.1
        b[mask] += 10.0 * rng.standard_normal(int(mask.sum()))
        truth["outliers"] = np.flatnonzero(mask).tolist()
    return A, b, truth


def generate_instance(kind: str, m: int, n: int, seed: int, outdir) -> dict:
    """Write ``A.mtx``, ``b.csv`` and ``truth.json`` into ``outdir``."""
    A, b, truth = make_instance(kind, m, n, seed)
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "matrix": os.path.join(outdir, "A.mtx"),
        "shift": os.path.join(outdir, "b.csv"),
        "truth": os.path.join(outdir, "truth.json"),
    }
    scipy.io.mmwrite(paths["matrix"], A, precision=17)
    with open(paths["shift"], "w") as fh:
        fh.write("".join(_fmt_float(float(v)) + "\n" for v in b))
    write_json(truth, paths["truth"])
    return paths

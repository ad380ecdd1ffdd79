import json

import numpy as np
import pytest
import scipy.io

from glms import ConfigError, PowerLoss, ProblemInstance
from glms.cli import main
from glms.io import (
    dumps,
    generate_instance,
    load_instance,
    make_instance,
    parse_loss,
    read_matrix,
    read_vector,
)


@pytest.fixture
def small(tmp_path):
    A = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]])
    scipy.io.mmwrite(tmp_path / "A.mtx", A)
    np.savetxt(tmp_path / "b.csv", [1.0, 2.0, 3.0])
    np.savetxt(tmp_path / "b2.csv", [1.0, 2.0])
    np.savetxt(tmp_path / "A.csv", A, delimiter=",")
    return tmp_path, A


def test_matrix_market_instance(small):
    d, A = small
    inst = load_instance(d / "A.mtx", d / "b.csv")
    assert (inst.m, inst.n) == (3, 2)
    np.testing.assert_array_equal(inst.A, A)


def test_csv_matches_mtx(small):
    d, A = small
    np.testing.assert_array_equal(read_matrix(d / "A.csv"), read_matrix(d / "A.mtx"))


def test_absent_shift_is_zero(small):
    d, _ = small
    inst = load_instance(d / "A.mtx")
    np.testing.assert_array_equal(inst.b, np.zeros(3))


def test_shift_length_mismatch(small):
    d, _ = small
    with pytest.raises(ConfigError):
        load_instance(d / "A.mtx", d / "b2.csv")


def test_vector_rejects_matrix(small):
    d, _ = small
    with pytest.raises(ConfigError):
        read_vector(d / "A.csv")


def test_missing_file():
    with pytest.raises(ConfigError):
        read_matrix("/nonexistent/A.mtx")


def test_zero_row_rejected():
    with pytest.raises(ConfigError):
        ProblemInstance(np.array([[1.0, 0.0], [0.0, 0.0]]), PowerLoss(2.0))


def test_parse_loss_forms(tmp_path):
    d = {"kind": "gamma-p", "p": 1.5, "thresholds": 2.0}
    (tmp_path / "loss.json").write_text(json.dumps(d))
    a = parse_loss(d)
    b = parse_loss(json.dumps(d))
    c = parse_loss(str(tmp_path / "loss.json"))
    z = np.linspace(-4, 4, 9)
    np.testing.assert_array_equal(a.value(z), b.value(z))
    np.testing.assert_array_equal(a.value(z), c.value(z))
    with pytest.raises(ConfigError):
        parse_loss("{not json")
    with pytest.raises(ConfigError):
        parse_loss({"kind": "nope"})


def test_float_round_trip():
    vals = [0.1, 1 / 3, 1e-300, 123456789.123456789, -2.5e17]
    back = json.loads(dumps(vals))
    assert back == vals


def test_nonfinite_written_as_null():
    assert json.loads(dumps({"a": float("nan"), "b": float("inf")})) == {"a": None, "b": None}


def test_generators_reproducible(tmp_path):
    p1 = generate_instance("gaussian", 200, 5, 1, tmp_path / "a")
    p2 = generate_instance("gaussian", 200, 5, 1, tmp_path / "b")
    for key in ("matrix", "shift", "truth"):
        with open(p1[key], "rb") as f1, open(p2[key], "rb") as f2:
            assert f1.read() == f2.read()
    A = read_matrix(p1["matrix"])
    A0, _, _ = make_instance("gaussian", 200, 5, 1)
    np.testing.assert_array_equal(A, A0)


def test_outlier_sidecar():
    _, _, truth = make_instance("outlier-regression", 300, 3, 2)
    assert len(truth["x0"]) == 3
    assert len(truth["outliers"]) > 0


def test_near_duplicate_pairs():
    A, _, _ = make_instance("near-duplicate", 40, 3, 3)
    diff = np.abs(A[0::2] - A[1::2])
    assert np.all(diff > 0) and np.all(diff < 1e-5)


# -- CLI


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "glms" in capsys.readouterr().out


def test_cli_seed_required(small):
    d, _ = small
    with pytest.raises(SystemExit) as exc:
        main(["sparsify", "--matrix", str(d / "A.mtx"), "--eps", "0.1", "--smin", "1",
              "--smax", "10", "--out", str(d / "o.json")])
    assert exc.value.code == 2


def test_cli_config_error_exit_code(small):
    d, _ = small
    rc = main(["sparsify", "--matrix", str(d / "A.mtx"), "--eps", "0.9", "--smin", "1",
               "--smax", "10", "--seed", "1", "--out", str(d / "o.json")])
    assert rc == 2


def test_cli_certify_fails_with_exit_4(tmp_path):
    loss = json.dumps({"kind": "gamma-p", "p": 1.5,
                       "constants": {"L": 0.5, "theta": 1.5, "c": 1, "u": 2, "C": 1, "K": 1}})
    rc = main(["certify-loss", "--loss", loss, "--out", str(tmp_path / "c.json")])
    assert rc == 4
    out = json.loads((tmp_path / "c.json").read_text())
    assert out["passed"] is False


def test_cli_infeasible_dual(tmp_path):
    A = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    scipy.io.mmwrite(tmp_path / "A.mtx", A)
    np.savetxt(tmp_path / "c.csv", [1.0, -1.0])
    rc = main(["solve-dual", "--matrix", str(tmp_path / "A.mtx"), "--c", str(tmp_path / "c.csv"),
               "--q", "3", "--eps", "0.01", "--seed", "0", "--out", str(tmp_path / "y.json")])
    assert rc == 3


def test_cli_manifest_and_replay_detects_edits(small):
    d, _ = small
    out = d / "s.json"
    rc = main(["solve", "--matrix", str(d / "A.mtx"), "--rhs", str(d / "b.csv"), "--p", "1.5",
               "--eps", "1e-6", "--seed", "3", "--out", str(out)])
    assert rc == 0
    man = json.loads((d / "s.json.manifest.json").read_text())
    assert man["command"] == "solve" and man["seed"] == 3
    assert set(man["inputs"]) == {"matrix", "rhs"}
    rc = main(["replay", "--manifest", str(d / "s.json.manifest.json"), "--out", str(d / "r.json")])
    assert rc == 0
    assert (d / "r.json").read_bytes() == out.read_bytes()
    np.savetxt(d / "b.csv", [1.0, 2.0, 3.5])
    rc = main(["replay", "--manifest", str(d / "s.json.manifest.json"), "--out", str(d / "r.json")])
    assert rc == 2

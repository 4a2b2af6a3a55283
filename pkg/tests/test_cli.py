import json

import numpy as np
import pytest

from noisereg.cli import main
from noisereg.data import Dataset, read_sparse_dataset, write_sparse_dataset


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def train_file(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 5))
    y = (X @ np.array([1.0, -1.0, 0.5, 0.0, 0.0]) + 0.3 * rng.standard_normal(60) > 0).astype(float)
    path = tmp_path / "train.svm"
    write_sparse_dataset(Dataset.from_dense(X, y), path)
    return path


def test_train_writes_model(train_file, tmp_path, capsys):
    model = tmp_path / "m.json"
    code, out, _ = run(["train", "--family", "logistic", "--penalty", "dropout", "--delta", 0.5,
                        "--data", train_file, "--out", model], capsys)
    assert code == 0
    saved = json.loads(model.read_text())
    assert saved["dim"] == 5 and len(saved["beta"]) == 5
    assert saved["noise"] == {"kind": "dropout", "param": 0.5}
    assert saved["penalty"] == "dropout-quad"
    report = json.loads(out)
    assert report["rows"][0]["converged"] is True


def test_l2_zero_equals_none(train_file, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(["train", "--penalty", "l2", "--lambda", 0, "--data", train_file, "--out", a, "--tolerance", 1e-10], capsys)
    run(["train", "--penalty", "none", "--data", train_file, "--out", b, "--tolerance", 1e-10], capsys)
    ba = np.array(json.loads(a.read_text())["beta"])
    bb = np.array(json.loads(b.read_text())["beta"])
    np.testing.assert_allclose(ba, bb, atol=1e-8)


def test_unlabeled_engages_semisup(train_file, tmp_path, capsys):
    unl = tmp_path / "u.svm"
    data = read_sparse_dataset(train_file)
    write_sparse_dataset(data.with_labels(np.zeros(data.n)), unl)
    model = tmp_path / "m.json"
    code, out, _ = run(["train", "--data", train_file, "--unlabeled", unl, "--alpha", 0.4, "--out", model], capsys)
    assert code == 0
    assert json.loads(out)["rows"][0]["penalty"] == "semisup-quad"
    assert json.loads(model.read_text())["penalty"] == "semisup-quad"


def _model(tmp_path, beta, family="logistic", scaling=None):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"family": family, "noise": None, "dim": len(beta), "beta": beta,
                                "scaling": scaling or [1.0] * len(beta)}))
    return path


def test_eval_separable_and_zero_model(tmp_path, capsys):
    data = tmp_path / "d.svm"
    data.write_text("1 1:2\n1 1:1\n0 1:-1\n1 1:3\n0 1:-2\n")
    code, out, _ = run(["eval", "--model", _model(tmp_path, [1.0]), "--data", data], capsys)
    assert code == 0 and json.loads(out)["rows"][0]["accuracy"] == 1.0
    code, out, _ = run(["eval", "--model", _model(tmp_path, [0.0]), "--data", data], capsys)
    assert json.loads(out)["rows"][0]["accuracy"] == pytest.approx(0.6)


def test_eval_mask_and_linear(tmp_path, capsys):
    data = tmp_path / "d.svm"
    data.write_text("".join(f"{i % 3} 1:{i + 1}\n" for i in range(10)))
    mask = tmp_path / "mask.txt"
    mask.write_text("1\n0\n0\n0\n0\n1\n0\n0\n0\n0\n")
    code, out, _ = run(["eval", "--model", _model(tmp_path, [0.0]), "--data", data, "--mask", mask,
                        "--format", "csv"], capsys)
    assert code == 0
    header, row = out.strip().splitlines()
    assert dict(zip(header.split(","), row.split(",")))["n_rows"] == "2"
    code, out, _ = run(["eval", "--model", _model(tmp_path, [0.0], "linear"), "--data", data], capsys)
    assert "mse" in json.loads(out)["rows"][0]


def test_eval_applies_model_scaling(tmp_path, capsys):
    data = tmp_path / "d.svm"
    data.write_text("1 1:1\n0 1:-1\n")
    code, out, _ = run(["eval", "--model", _model(tmp_path, [1.0], "linear", [2.0]), "--data", data], capsys)
    # scaled margins are +-2 against labels 1 and 0
    assert json.loads(out)["rows"][0]["mse"] == pytest.approx((1 + 4) / 2)


def test_exit_codes(train_file, tmp_path, capsys):
    wide = tmp_path / "wide.svm"
    wide.write_text("1 9:1\n")
    assert run(["eval", "--model", _model(tmp_path, [1.0]), "--data", wide], capsys)[0] == 1
    bad = tmp_path / "bad.svm"
    bad.write_text("1 3:1 2:1\n")
    code, _, err = run(["train", "--data", bad, "--out", tmp_path / "m.json"], capsys)
    assert code == 1 and "line 1" in err
    assert run(["train", "--data", tmp_path / "missing.svm", "--out", tmp_path / "m.json"], capsys)[0] == 1
    for argv in (["train", "--data", train_file, "--delta", 1.5, "--out", "x"],
                 ["train", "--data", train_file],
                 ["train", "--data", train_file, "--lambda", -1, "--out", "x"],
                 ["table3", "--runs", 0],
                 ["nonsense"],
                 ["fig1a", "--format", "xml"]):
        with pytest.raises(SystemExit) as info:
            main([str(a) for a in argv])
        assert info.value.code == 2
    capsys.readouterr()


def test_simulate_writes_data_and_mask(tmp_path, capsys):
    out, mask = tmp_path / "s.svm", tmp_path / "mask.txt"
    code, report, _ = run(["simulate", "--n", 50, "--seed", 3, "--out", out, "--mask-out", mask], capsys)
    assert code == 0
    data = read_sparse_dataset(out)
    assert (data.n, data.dim) == (50, 1050)
    assert mask.read_text().count("1") == json.loads(report)["rows"][0]["signal_rows"] == 10


@pytest.mark.parametrize(
    "argv",
    [
        ["fig1a"],
        ["fig1a", "--format", "csv"],
        ["trace", "--n", 60, "--d", 10, "--samples", 200],
        ["fisher", "--n", 3000],
        ["table3", "--runs", 2, "--n-test", 500],
    ],
)
def test_experiment_reports_byte_identical(argv, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(argv + ["--seed", 4, "--out", a], capsys)[0] == 0
    assert run(argv + ["--seed", 4, "--out", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    if "--format" not in argv:
        assert json.loads(a.read_text())["parameters"]

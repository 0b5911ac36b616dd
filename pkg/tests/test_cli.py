import csv
import json

import numpy as np
import pytest

from conftest import cube_net, random_net
from ladderpoly import Head, forward, init_network, read_model, save_model
from ladderpoly.cli import main
from ladderpoly.compat import KernelModel, augment, load_tt
from ladderpoly.serialize import network_to_dict


@pytest.fixture
def product_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(1000, 2))
    path = tmp_path / "prod.csv"
    np.savetxt(path, np.column_stack([X, X[:, 0] * X[:, 1]]), delimiter=",", header="x1,x2,y", comments="", fmt="%.17g")
    return path


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_train_product_reaches_small_rmse(tmp_path, product_csv):
    out = tmp_path / "o"
    assert run("train", "--data", product_csv, "--target", "y", "--hidden", "4", "--lr", "0.01", "--out", out) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["test"]["rmse"] < 0.01
    for name in ("model.json", "loss_history.csv", "run_config.json", "split.json"):
        assert (out / name).exists()
    assert read_csv(out / "loss_history.csv")[0]["epoch"] == "0"


def test_train_single_product_unit(tmp_path, product_csv):
    # raw inputs: one unit (w.x)(v.x) represents x1*x2 exactly
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"standardize": False, "append_one": False}}))
    out = tmp_path / "o"
    args = ["train", "--config", cfg, "--data", product_csv, "--target", "y", "--hidden", "", "--lr", "0.01", "--out", out]
    assert run(*args) == 0
    net, _ = read_model(out / "model.json")
    assert net.depth == 1
    assert json.loads((out / "metrics.json").read_text())["test"]["rmse"] < 0.01


def test_rerun_is_byte_identical(tmp_path, product_csv):
    args = ["train", "--data", product_csv, "--target", "y", "--hidden", "3", "--epochs", "5", "--seed", "11"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in ("model.json", "metrics.json", "loss_history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_zero_epochs_saves_initialization(tmp_path, product_csv):
    out = tmp_path / "o"
    assert run("--seed", 5, "train", "--data", product_csv, "--target", "y", "--hidden", "3", "--epochs", "0", "--out", out) == 0
    net, _ = read_model(out / "model.json")
    init = init_network(3, [3, 1], np.random.default_rng([5, 1]), head=Head.REGRESSION, gate_column=2)
    for a, b in zip(net.layers, init.layers):
        assert np.array_equal(a.w, b.w) and np.array_equal(a.v, b.v)
    assert (out / "metrics.json").exists()


def test_config_file_and_flag_override(tmp_path, product_csv):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": {"path": str(product_csv), "target_column": "y"}, "model": {"hidden": [2]}, "train": {"epochs": 2}}))
    out = tmp_path / "o"
    assert run("train", "--config", cfg, "--epochs", "3", "--out", out) == 0
    resolved = json.loads((out / "run_config.json").read_text())
    assert resolved["train"]["epochs"] == 3 and resolved["model"]["hidden"] == [2]
    assert len(read_csv(out / "loss_history.csv")) == 4


def test_eval_on_saved_model(tmp_path, product_csv):
    assert run("train", "--data", product_csv, "--target", "y", "--hidden", "2", "--epochs", "2", "--out", tmp_path / "t") == 0
    assert run("eval", "--model", tmp_path / "t" / "model.json", "--data", product_csv, "--out", tmp_path / "e") == 0
    assert "rmse" in json.loads((tmp_path / "e" / "metrics.json").read_text())


def test_classification_error_rate(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 2))
    lab = np.where(X[:, 0] * X[:, 1] > 0, "same", "diff")
    path = tmp_path / "c.csv"
    with open(path, "w") as fh:
        fh.write("a,b,label\n")
        for (a, b), l in zip(X, lab):
            fh.write(f"{float(a)!r},{float(b)!r},{l}\n")
    out = tmp_path / "o"
    assert run("train", "--data", path, "--target", "label", "--task", "binary", "--hidden", "4", "--epochs", "60", "--lr", "0.01", "--out", out) == 0
    assert json.loads((out / "metrics.json").read_text())["test"]["error_rate"] < 0.15


def test_analyze_cube_net(tmp_path):
    save_model(cube_net(2), tmp_path / "cube.json")
    out = tmp_path / "a"
    assert run("analyze", "--model", tmp_path / "cube.json", "--radius", "1", "--t-range=-1,1", "--out", out) == 0
    rep = json.loads((out / "lipschitz.json").read_text())
    assert rep["layers"][1]["grad_bound"] == 3.0
    rows = read_csv(out / "line_poly.csv")
    assert len(rows) == 101 and float(rows[0]["value_0"]) == -1.0
    line = json.loads((out / "line_coeffs.json").read_text())
    assert line["minimum"] == {"t": -1.0, "value": -1.0, "t_range": [-1.0, 1.0]}


def test_analyze_scatter(tmp_path, product_csv):
    assert run("train", "--data", product_csv, "--target", "y", "--hidden", "4,4", "--epochs", "1", "--out", tmp_path / "t") == 0
    out = tmp_path / "a"
    assert run("analyze", "--model", tmp_path / "t" / "model.json", "--data", product_csv, "--out", out) == 0
    rows = read_csv(out / "scatter.csv")
    assert len(rows) == 400 * (4 + 4 + 1)


def test_analyze_with_intercepts_is_explicit_error(tmp_path, rng, capsys):
    save_model(random_net(rng, 2, [3, 1], intercepts=True), tmp_path / "m.json")
    assert run("analyze", "--model", tmp_path / "m.json", "--out", tmp_path / "a") == 1
    assert "no-lipschitz" in capsys.readouterr().err
    assert run("analyze", "--model", tmp_path / "m.json", "--no-lipschitz", "--out", tmp_path / "a") == 0


def test_analyze_folds_batch_norm(tmp_path, product_csv):
    assert run("train", "--data", product_csv, "--target", "y", "--hidden", "3", "--epochs", "2", "--bn", "--out", tmp_path / "t") == 0
    net, _ = read_model(tmp_path / "t" / "model.json")
    assert net.has_bn
    assert run("analyze", "--model", tmp_path / "t" / "model.json", "--no-lipschitz", "--out", tmp_path / "a") == 0
    assert (tmp_path / "a" / "line_poly.csv").exists()


def test_bayes_zero_variance_single_bin(tmp_path, rng):
    net = random_net(rng, 3, [4, 1])
    save_model(net, tmp_path / "m.json")
    out = tmp_path / "b"
    assert run("bayes", "--model", tmp_path / "m.json", "--x", "0.5,-1,2", "--sigma2", "0", "--samples", "500", "--out", out) == 0
    hist = read_csv(out / "histogram.csv")
    value = forward(net, np.array([0.5, -1.0, 2.0]))[0][0]
    assert len(hist) == 1
    assert float(hist[0]["bin_left"]) == value == float(hist[0]["bin_right"])
    assert float(hist[0]["count"]) == 500
    mom = read_csv(out / "moments.csv")[0]
    assert float(mom["var"]) == 0.0 and float(mom["ks"]) == 0.0


def test_bayes_histogram_columns(tmp_path, rng):
    save_model(random_net(rng, 3, [4, 1]), tmp_path / "m.json")
    out = tmp_path / "b"
    assert run("bayes", "--model", tmp_path / "m.json", "--x", "1,1,1", "--sigma2", "0.05,0.1", "--samples", "2000", "--bins", "20", "--out", out) == 0
    assert len(read_csv(out / "moments.csv")) == 2
    hist = read_csv(out / "histogram.csv")
    assert len(hist) == 40 and set(hist[0]) == {"sigma2", "bin_left", "bin_right", "count", "gaussian_density", "expected_count"}


def test_convert_kernel_and_fm(tmp_path, rng):
    desc = tmp_path / "k.json"
    desc.write_text(json.dumps({"pi": [1.0, -0.5], "p": [[1.0, 2.0], [0.5, -1.0]], "lambda": 1.0, "m": 3}))
    assert run("convert", "--kind", "kernel", "--input", desc, "--out", tmp_path / "k") == 0
    net, _ = read_model(tmp_path / "k" / "model.json")
    model = KernelModel([1.0, -0.5], [[1.0, 2.0], [0.5, -1.0]], 1.0, 3)
    x = np.array([0.3, -0.7])
    assert forward(net, augment(x))[0][0] == pytest.approx(model.predict(x)[0], rel=1e-12)
    desc.write_text(json.dumps({"kind": "fm2", "w0": 1, "w1": [0, 0], "factors": [[1], [1]]}))
    assert run("convert", "--input", desc, "--out", tmp_path / "f") == 0
    net, _ = read_model(tmp_path / "f" / "model.json")
    assert forward(net, augment(np.array([3.0, 5.0])))[0][0] == 16.0


def test_tt_command(tmp_path, rng):
    save_model(random_net(rng, 3, [4, 2]), tmp_path / "m.json")
    assert run("tt", "--model", tmp_path / "m.json", "--output", "0", "--out", tmp_path / "t") == 0
    cores = load_tt(tmp_path / "t" / "tt_cores.json")
    assert [c.shape for c in cores] == [(3, 3, 1), (4, 3, 3), (1, 3, 4)]


def test_experiment_small(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"product_approx": {"hidden_units": [1], "runs": 2, "n": 50, "epochs": 2}}))
    out = tmp_path / "x"
    assert run("experiment", "product-approx", "--config", cfg, "--out", out) == 0
    assert len(read_csv(out / "table1.csv")) == 2
    assert len(read_csv(out / "table1_runs.csv")) == 4


def test_exit_codes(tmp_path, product_csv):
    assert run("train", "--data", tmp_path / "nope.csv", "--out", tmp_path / "x") == 2
    assert run("bogus") == 1
    assert run("train", "--out", tmp_path / "x") == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("train", "--config", bad, "--out", tmp_path / "x") == 1
    bad.write_text(json.dumps({"data": {"path": str(product_csv), "target_column": "y"}, "train": {"momentum": 1}}))
    assert run("train", "--config", bad, "--out", tmp_path / "x") == 1
    cells = tmp_path / "cells.csv"
    cells.write_text("a,y\n1,2\nx,3\n")
    assert run("train", "--data", cells, "--target", "y", "--out", tmp_path / "x") == 2


def test_numeric_failure_exit_code(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1e3, 1e3, size=(64, 2))
    path = tmp_path / "big.csv"
    np.savetxt(path, np.column_stack([X, X[:, 0] * 1e3]), delimiter=",", header="a,b,y", comments="", fmt="%.17g")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"standardize": False, "hidden": [8, 8, 8], "init_scale": 3.0}, "train": {"optimizer": "sgd", "learning_rate": 10.0}}))
    assert run("train", "--config", cfg, "--data", path, "--target", "y", "--out", tmp_path / "x") == 3

"""Command-line interface.

Every command reads an optional JSON config (``--config``), lets flags
override it, writes the resolved configuration next to its outputs, and uses
stable file names under ``--out``.  Exit codes: 0 success, 1 usage or config
error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import analysis, bayes, compat, dataio, experiments
from .core import Head, forward_batch, geometric_widths, init_network, predict
from .errors import (
    ConfigError,
    DataError,
    LadderError,
    NumericError,
    PreconditionError,
    ShapeError,
    StateError,
)
from .serialize import read_model, save_model
from .train import TrainConfig, fold_network, train_model

log = logging.getLogger("ladderpoly")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

HEAD_FOR_TASK = {"regression": Head.REGRESSION, "binary": Head.BINARY, "multiclass": Head.MULTICLASS}


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(sec)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _preprocess(extra: dict, X) -> np.ndarray:
    """Map raw features into the network's input space."""
    pre = extra.get("preprocess", {})
    X = np.asarray(X, dtype=np.float64)
    if pre.get("standardizer"):
        X = dataio.Standardizer.from_dict(pre["standardizer"]).transform(X)
    if pre.get("append_one"):
        X = compat.augment(X)
    return X


def _metrics(net, X, y, task: str) -> dict:
    if X.shape[0] == 0:
        return {}
    if task == "regression":
        r = forward_batch(net, X)[:, 0] - y
        return {"rmse": float(np.sqrt(np.mean(r**2))), "n": int(X.shape[0])}
    p = predict(net, X)
    yhat = (p > 0.5).astype(int) if task == "binary" else p.argmax(axis=1)
    return {"error_rate": float(np.mean(yhat != y)), "n": int(X.shape[0])}


# ------------------------------------------------------------------ train


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    data = _section(cfg, "data")
    model = _section(cfg, "model")
    tcfg = _section(cfg, "train")
    split_cfg = _section(cfg, "split")
    for flag, sec, key in [
        ("data", data, "path"),
        ("target", data, "target_column"),
        ("task", data, "task"),
        ("epochs", tcfg, "epochs"),
        ("lr", tcfg, "learning_rate"),
        ("batch_size", tcfg, "batch_size"),
        ("optimizer", tcfg, "optimizer"),
        ("l2", tcfg, "l2_weight"),
        ("dropout", tcfg, "dropout_rate"),
    ]:
        if getattr(args, flag, None) is not None:
            sec[key] = getattr(args, flag)
    if args.hidden is not None:
        model["hidden"] = _ints(args.hidden)
    if args.bn:
        tcfg["bn_enabled"] = True
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    tcfg["seed"] = seed
    tcfg.setdefault("restore_best", True)
    if "path" not in data:
        raise ConfigError("no dataset given; pass --data or set data.path in the config")
    data.setdefault("target_column", -1)
    data.setdefault("has_header", True)
    data.setdefault("task", "regression")
    split_cfg.setdefault("fractions", [0.7, 0.1, 0.2])
    model.setdefault("hidden", [16])
    model.setdefault("intercepts", False)
    model.setdefault("append_one", True)
    model.setdefault("standardize", True)
    model.setdefault("init_scale", 1.0)
    model.setdefault("gate_bias", 1.0)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(tcfg) - known
    if unknown:
        raise ConfigError(f"unknown train options: {sorted(unknown)}")
    train_config = TrainConfig(**tcfg)

    ds = dataio.load_csv(data["path"], data["target_column"], bool(data["has_header"]), data["task"])
    tr, va, te = dataio.split_indices(ds.n, split_cfg["fractions"], seed)
    d_train, d_val, d_test = ds.subset(tr), ds.subset(va), ds.subset(te)

    extra = {
        "task": ds.task,
        "target_column": data["target_column"],
        "has_header": bool(data["has_header"]),
        "feature_names": list(ds.feature_names or ()),
        "classes": list(ds.classes) if ds.classes else None,
        "preprocess": {"append_one": bool(model["append_one"]), "standardizer": None},
    }
    if model["standardize"]:
        extra["preprocess"]["standardizer"] = dataio.Standardizer.fit(d_train).to_dict()

    d_out = {"regression": 1, "binary": 1, "multiclass": ds.n_classes}[ds.task]
    hidden = list(model["hidden"])
    if model.get("shrink_alpha") is not None:
        hidden = geometric_widths(ds.d, d_out, int(model.get("n_hidden", len(hidden) or 1)), float(model["shrink_alpha"]))
    d_0 = ds.d + (1 if model["append_one"] else 0)
    net = init_network(
        d_0,
        hidden + [d_out],
        np.random.default_rng([seed, 1]),
        intercepts=bool(model["intercepts"]),
        head=HEAD_FOR_TASK[ds.task],
        scale=float(model["init_scale"]),
        gate_column=ds.d if model["append_one"] else None,
        gate_bias=float(model["gate_bias"]),
    )

    def xy(d):
        return _preprocess(extra, d.features), d.targets

    result = train_model(net, xy(d_train), train_config, val=xy(d_val) if d_val.n else None)

    out = _out_dir(args)
    save_model(result.net, out / "model.json", extra)
    (out / "loss_history.csv").write_text(result.history_csv())
    metrics = {name: _metrics(result.net, *xy(d), ds.task) for name, d in [("train", d_train), ("val", d_val), ("test", d_test)]}
    _write_json(out / "metrics.json", metrics)
    resolved = {"seed": seed, "data": data, "model": dict(model, hidden=hidden), "train": asdict(train_config), "split": split_cfg}
    _write_json(out / "run_config.json", resolved)
    (out / "split.json").write_text(
        dataio.indices_to_json({"train": tr, "val": va, "test": te}) + "\n"
    )
    print(json.dumps(metrics["test"] or metrics["train"]))
    return EXIT_OK


def cmd_eval(args) -> int:
    net, extra = read_model(args.model)
    task = args.task or extra.get("task", "regression")
    target = args.target if args.target is not None else extra.get("target_column", -1)
    ds = dataio.load_csv(args.data, target, bool(extra.get("has_header", True)), task)
    if ds.classes and extra.get("classes"):
        mapping = {c: i for i, c in enumerate(extra["classes"])}
        try:
            y = np.array([mapping[ds.classes[i]] for i in ds.targets])
        except KeyError as exc:
            raise DataError(f"label {exc} was not seen during training") from None
    else:
        y = ds.targets
    metrics = _metrics(net, _preprocess(extra, ds.features), y, task)
    out = _out_dir(args)
    _write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics))
    return EXIT_OK


# ---------------------------------------------------------------- analyze


def _vector_arg(s, d: int, default, name: str) -> np.ndarray:
    if s is None:
        return default
    v = np.array(_floats(s) if isinstance(s, str) else s, dtype=np.float64)
    if v.shape != (d,):
        raise ConfigError(f"{name} needs {d} values, got {v.shape[0]}")
    return v


def cmd_analyze(args) -> int:
    cfg = _section(_load_config(args.config), "analyze")
    net, extra = read_model(args.model)
    net = fold_network(net)
    out = _out_dir(args)
    d0 = net.d_0
    radius = float(args.radius if args.radius is not None else cfg.get("radius", 1.0))
    e1 = np.zeros(d0)
    e1[0] = 1.0
    x0 = _vector_arg(args.x0 if args.x0 is not None else cfg.get("x0"), d0, np.zeros(d0), "x0")
    g = _vector_arg(args.direction if args.direction is not None else cfg.get("direction"), d0, e1, "direction")
    t_range = _floats(args.t_range) if args.t_range else cfg.get("t_range", [-1.0, 1.0])
    if len(t_range) != 2:
        raise ConfigError("t-range needs two values lo,hi")
    points = int(args.points or cfg.get("points", 101))

    report = {"model": str(args.model), "radius": radius}
    if not args.no_lipschitz:
        try:
            rep = analysis.lipschitz_bounds(net, radius)
        except PreconditionError as exc:
            raise PreconditionError(f"{exc}; rerun with --no-lipschitz to skip the bounds") from None
        report.update(rep.to_dict())
        _write_json(out / "lipschitz.json", report)

    lc = analysis.line_coeffs(net, x0, g)
    ts = np.linspace(t_range[0], t_range[1], points)
    vals = lc.evaluate(ts)
    rows = ["t," + ",".join(f"value_{i}" for i in range(vals.shape[1]))]
    rows += [f"{t!r}," + ",".join(repr(float(v)) for v in row) for t, row in zip(ts, vals)]
    (out / "line_poly.csv").write_text("\n".join(rows) + "\n")
    line_doc = {
        "x0": x0.tolist(),
        "direction": g.tolist(),
        "degree": lc.degree,
        "coeffs_highest_first": lc.coeffs.tolist(),
    }
    if net.d_out == 1:
        t_star, value = analysis.minimize_along(net, x0, g, t_range)
        line_doc["minimum"] = {"t": t_star, "value": value, "t_range": list(t_range)}
    _write_json(out / "line_coeffs.json", line_doc)

    if args.data is not None:
        ds = dataio.load_csv(args.data, extra.get("target_column", -1), bool(extra.get("has_header", True)), extra.get("task", "regression"))
        X = _preprocess(extra, ds.features)
        n = min(int(args.samples), X.shape[0])
        X = X[np.random.default_rng(args.seed or 0).permutation(X.shape[0])[:n]]
        layers = _ints(args.layers) if args.layers else list(range(net.depth))
        lines = ["layer,unit,u,h"]
        for layer in layers:
            width = net.layers[layer].d_out if 0 <= layer < net.depth else 0
            units = _ints(args.units) if args.units else list(range(min(4, width)))
            for unit, pairs in analysis.activation_scatter(net, X, layer, units).items():
                lines += [f"{layer},{unit},{u!r},{h!r}" for u, h in pairs.tolist()]
        (out / "scatter.csv").write_text("\n".join(lines) + "\n")
    print(json.dumps({k: report[k] for k in report if k in ("radius", "lipschitz_bound")}))
    return EXIT_OK


# ------------------------------------------------------------------ bayes


def cmd_bayes(args) -> int:
    cfg = _section(_load_config(args.config), "bayes")
    net, extra = read_model(args.model)
    net = fold_network(net)
    if net.has_intercepts:
        raise PreconditionError("moment propagation needs an intercept-free network")
    if net.d_out != 1:
        raise PreconditionError("the output histogram needs a scalar-output network")
    if args.x is not None or cfg.get("x") is not None:
        x = _vector_arg(args.x if args.x is not None else cfg.get("x"), net.d_0, None, "x")
    elif args.data is not None:
        ds = dataio.load_csv(args.data, extra.get("target_column", -1), bool(extra.get("has_header", True)), extra.get("task", "regression"))
        x = _preprocess(extra, ds.features)[int(args.row)]
    else:
        raise ConfigError("give an input with --x or --data/--row")
    sigma2s = _floats(args.sigma2) if args.sigma2 else cfg.get("sigma2", [0.05, 0.1])
    n = int(args.samples or cfg.get("samples", 10_000))
    bins = int(args.bins or cfg.get("bins", 50))
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))

    mrows = ["sigma2,mu,var,mc_mean,mc_var,mean_se,var_se,ks"]
    hrows = ["sigma2,bin_left,bin_right,count,gaussian_density,expected_count"]
    from scipy import stats

    for s2 in sigma2s:
        chk = experiments.output_distribution_check(net, x, s2, n=n, seed=seed, bins=bins)
        mrows.append(
            ",".join(repr(float(v)) for v in (s2, chk.mu, chk.var, chk.mc_mean, chk.mc_var, chk.mean_se, chk.var_se, chk.ks))
        )
        for left, right, count in chk.hist.tolist():
            centre = 0.5 * (left + right)
            if chk.var > 0:
                dens = float(stats.norm.pdf(centre, chk.mu, np.sqrt(chk.var)))
                expected = n * float(stats.norm.cdf(right, chk.mu, np.sqrt(chk.var)) - stats.norm.cdf(left, chk.mu, np.sqrt(chk.var)))
            else:
                dens, expected = float("inf"), float(n)
            hrows.append(",".join(repr(float(v)) for v in (s2, left, right, count, dens, expected)))
    out = _out_dir(args)
    (out / "moments.csv").write_text("\n".join(mrows) + "\n")
    (out / "histogram.csv").write_text("\n".join(hrows) + "\n")
    print(mrows[-1])
    return EXIT_OK


# ------------------------------------------------------- convert / tt / exp


def cmd_convert(args) -> int:
    doc = _load_config(args.input)
    kind = args.kind or doc.get("kind")
    if kind == "kernel":
        net = compat.from_poly_kernel(compat.kernel_from_dict(doc))
    elif kind == "fm2":
        net = compat.from_fm2(compat.fm2_from_dict(doc))
    else:
        raise ConfigError("--kind must be 'kernel' or 'fm2'")
    out = _out_dir(args)
    save_model(net, out / "model.json", {"task": "regression", "preprocess": {"append_one": True, "standardizer": None}, "converted_from": kind})
    print(json.dumps({"layers": net.depth, "widths": net.widths, "d_0": net.d_0}))
    return EXIT_OK


def cmd_tt(args) -> int:
    net, _ = read_model(args.model)
    cores = compat.to_tensor_train(net, args.output)
    out = _out_dir(args)
    compat.save_tt(cores, out / "tt_cores.json")
    print(json.dumps({"cores": [list(c.shape) for c in cores]}))
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.name != "product-approx":
        raise ConfigError(f"unknown experiment {args.name!r}")
    cfg = _section(_load_config(args.config), "product_approx")
    valid = {f.name for f in fields(experiments.ProductApproxConfig)}
    if set(cfg) - valid:
        raise ConfigError(f"unknown experiment options: {sorted(set(cfg) - valid)}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.runs is not None:
        cfg["runs"] = args.runs
    for key in ("hidden_units", "targets"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    pc = experiments.ProductApproxConfig(**cfg)
    rep = experiments.run_product_approx(pc)
    out = _out_dir(args)
    (out / "table1.csv").write_text(rep.to_csv())
    runs = ["target,hidden,run,rmse"] + [
        f"{t},{h},{i},{r!r}" for (t, h), rs in sorted(rep.rmse.items()) for i, r in enumerate(rs)
    ]
    (out / "table1_runs.csv").write_text("\n".join(runs) + "\n")
    _write_json(out / "run_config.json", asdict(pc))
    sys.stdout.write(rep.to_csv())
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    p = argparse.ArgumentParser(prog="ladderpoly", description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="train a ladder network on a CSV dataset")
    s.add_argument("--data")
    s.add_argument("--target")
    s.add_argument("--task", choices=dataio.TASKS)
    s.add_argument("--hidden", help="comma-separated hidden widths")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--optimizer", choices=("sgd", "adam"))
    s.add_argument("--l2", type=float)
    s.add_argument("--dropout", type=float)
    s.add_argument("--bn", action="store_true", help="train with batch normalization")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a saved model on a CSV dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--target")
    s.add_argument("--task", choices=dataio.TASKS)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", parents=[common], help="Lipschitz bounds, line polynomial, activation scatter")
    s.add_argument("--model", required=True)
    s.add_argument("--radius", type=float)
    s.add_argument("--x0")
    s.add_argument("--direction")
    s.add_argument("--t-range")
    s.add_argument("--points", type=int)
    s.add_argument("--no-lipschitz", action="store_true")
    s.add_argument("--data", help="CSV whose rows feed the activation scatter")
    s.add_argument("--samples", type=int, default=400)
    s.add_argument("--layers")
    s.add_argument("--units")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("bayes", parents=[common], help="output moments under a Gaussian weight prior")
    s.add_argument("--model", required=True)
    s.add_argument("--x", help="comma-separated input in the network's input space")
    s.add_argument("--data")
    s.add_argument("--row", type=int, default=0)
    s.add_argument("--sigma2")
    s.add_argument("--samples", type=int)
    s.add_argument("--bins", type=int)
    s.set_defaults(func=cmd_bayes)

    s = sub.add_parser("convert", parents=[common], help="kernel or factorization-machine description to a ladder network")
    s.add_argument("--kind", choices=("kernel", "fm2"))
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("tt", parents=[common], help="write tensor-train cores of a model")
    s.add_argument("--model", required=True)
    s.add_argument("--output", type=int, help="keep a single output unit")
    s.set_defaults(func=cmd_tt)

    s = sub.add_parser("experiment", parents=[common], help="reference experiments")
    s.add_argument("name", choices=("product-approx",))
    s.add_argument("--runs", type=int)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, PreconditionError, StateError, LadderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()

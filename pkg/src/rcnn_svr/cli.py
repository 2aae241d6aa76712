"""Command-line interface: ``rcnn-svr <command> [options]``.

Commands: ``gen-data``, ``train``, ``predict``, ``evaluate``, ``compare``,
``layer-sweep``. Options may also come from ``--config FILE``, a flat
``key = value`` file whose keys are the long option names without dashes
(``max-epochs = 300``). Command-line flags override the file, which
overrides built-in defaults. The resolved configuration is printed to
stderr before any work starts.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

from . import dataio, metrics
from . import neural_net as nn
from . import pipeline as pl
from .errors import RcnnSvrError
from .svr import SvrHyperparams

DEFAULTS = {
    "data": None,
    "model": None,
    "kind": None,
    "train-rows": None,
    "test-rows": None,
    "seed": 7,
    "max-epochs": 500,
    "target-mse": 0.0,
    "lr": 0.01,
    "momentum": 0.9,
    "batch-size": 10,
    "c": 1.0,
    "epsilon": 0.1,
    "extraction-layer": None,
    "out": None,
    "noise-sd": 0.05,
    "months": 62,
}

# options each command accepts, in echo order
COMMAND_OPTIONS = {
    "gen-data": ["months", "seed", "noise-sd", "out"],
    "train": ["data", "kind", "train-rows", "seed", "max-epochs", "target-mse", "lr", "momentum",
              "batch-size", "c", "epsilon", "extraction-layer", "out"],
    "predict": ["model", "data", "out"],
    "evaluate": ["model", "data", "train-rows", "test-rows", "out"],
    "compare": ["data", "months", "noise-sd", "train-rows", "test-rows", "seed", "max-epochs",
                "target-mse", "lr", "momentum", "batch-size", "c", "epsilon", "out"],
    "layer-sweep": ["data", "months", "noise-sd", "train-rows", "test-rows", "seed", "max-epochs",
                    "target-mse", "lr", "momentum", "batch-size", "c", "epsilon", "out"],
}

OPTION_TYPES = {
    "train-rows": int, "test-rows": int, "seed": int, "max-epochs": int, "target-mse": float,
    "lr": float, "momentum": float, "batch-size": int, "c": float, "epsilon": float,
    "extraction-layer": int, "noise-sd": float, "months": int,
}

OPTION_HELP = {
    "data": "dataset CSV (month,<factors...>,ev)",
    "model": "model file written by 'train'",
    "kind": "pipeline kind",
    "train-rows": "number of leading months used for training",
    "test-rows": "number of months after the training rows held out for testing",
    "seed": "random seed for data generation and training",
    "max-epochs": "maximum training epochs",
    "target-mse": "stop training once the epoch MSE reaches this value",
    "lr": "learning rate",
    "momentum": "momentum coefficient",
    "batch-size": "mini-batch size",
    "c": "SVR slack penalty C",
    "epsilon": "SVR tube half-width (standardized target units)",
    "extraction-layer": "layer index whose activations feed the SVR (rcnn-svr only)",
    "out": "output path (file or directory, depending on the command)",
    "noise-sd": "target noise sd for synthetic data",
    "months": "number of synthetic months",
}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcnn-svr", description="RCNN / SVR / RCNN-SVR forecasting")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in COMMAND_OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="key = value configuration file")
        for name in options:
            kwargs = {"default": None, "help": OPTION_HELP[name]}
            if name in OPTION_TYPES:
                kwargs["type"] = OPTION_TYPES[name]
            if name == "kind":
                kwargs["choices"] = [k.value for k in pl.PipelineKind]
            p.add_argument(f"--{name}", dest=name.replace("-", "_"), **kwargs)
    return parser


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.lstrip("-")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value or None
    return values


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags for ``command``."""
    options = COMMAND_OPTIONS[command]
    cfg = {name: DEFAULTS[name] for name in options}
    if args.config:
        for key, value in read_config_file(args.config).items():
            if key not in cfg:
                raise UsageError(f"{args.config}: key {key!r} does not apply to '{command}'")
            if value is None:
                cfg[key] = None
                continue
            conv = OPTION_TYPES.get(key, str)
            try:
                cfg[key] = conv(value)
            except ValueError:
                raise UsageError(f"{args.config}: bad value {value!r} for {key!r}") from None
            if key == "kind" and value not in [k.value for k in pl.PipelineKind]:
                raise UsageError(f"{args.config}: invalid kind {value!r}")
    for name in options:
        value = getattr(args, name.replace("-", "_"))
        if value is not None:
            cfg[name] = value
    return cfg


def echo_config(command: str, cfg: dict, stream=None) -> None:
    stream = stream or sys.stderr
    print(f"# rcnn-svr {command}", file=stream)
    for key, value in cfg.items():
        print(f"{key} = {'' if value is None else value}", file=stream)


def config_text(command: str, cfg: dict) -> str:
    buf = io.StringIO()
    echo_config(command, cfg, buf)
    return buf.getvalue()


def _require(cfg, *names):
    missing = [n for n in names if cfg.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n for n in missing))


def _train_config(cfg) -> nn.TrainConfig:
    return nn.TrainConfig(
        max_epochs=cfg["max-epochs"], target_mse=cfg["target-mse"], learning_rate=cfg["lr"],
        momentum=cfg["momentum"], batch_size=cfg["batch-size"], seed=cfg["seed"],
    )


def _svr_hp(cfg) -> SvrHyperparams:
    return SvrHyperparams(C=cfg["c"], epsilon=cfg["epsilon"])


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _experiment_split(cfg):
    """Dataset for compare / layer-sweep: ``--data`` or synthetic, split chronologically."""
    if cfg["data"] is not None:
        data = dataio.load_csv(cfg["data"])
    else:
        data = dataio.generate_synthetic(cfg["months"], cfg["seed"], cfg["noise-sd"])
    test_rows = cfg["test-rows"] if cfg["test-rows"] is not None else min(12, len(data) - 1)
    train_rows = cfg["train-rows"] if cfg["train-rows"] is not None else len(data) - test_rows
    return dataio.split(data, dataio.SplitSpec(train_rows, test_rows))


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg) -> int:
    out = cfg["out"] or "synthetic.csv"
    d = dataio.generate_synthetic(cfg["months"], cfg["seed"], cfg["noise-sd"])
    dataio.save_csv(d, out)
    print(f"wrote {len(d)} months to {out}")
    return 0


def cmd_train(cfg) -> int:
    _require(cfg, "data", "kind")
    data = dataio.load_csv(cfg["data"])
    rows = cfg["train-rows"] if cfg["train-rows"] is not None else len(data)
    if not 1 <= rows <= len(data):
        raise dataio.SplitTooLargeError(f"--train-rows {rows} outside 1..{len(data)}")
    train = data.rows(0, rows)
    out = Path(cfg["out"] or "model.rcnnsvr")
    start = time.perf_counter()
    p = pl.fit_pipeline(cfg["kind"], train, _train_config(cfg), _svr_hp(cfg),
                        extraction_layer=cfg["extraction-layer"])
    elapsed = time.perf_counter() - start
    dataio.save_model(p, out)
    log = out.with_name(out.name + ".epochs.csv")
    history = p.train_report.mse_per_epoch if p.train_report else []
    _write_text(log, _csv_text(["epoch", "mse"], [(i + 1, float(v)) for i, v in enumerate(history)]))
    msg = f"trained {p.kind.value} on {rows} months in {elapsed:.2f} s; model -> {out}, log -> {log}"
    if p.train_report:
        msg += f"; {p.train_report.stop_reason.value} after {p.train_report.epochs_run} epochs"
    print(msg)
    return 0


def cmd_predict(cfg) -> int:
    _require(cfg, "model", "data")
    p = dataio.load_model(cfg["model"])
    data = dataio.load_csv(cfg["data"], require_targets=False)
    yhat = pl.predict_pipeline(p, data.factors)
    text = _csv_text(["month", "predicted_ev"], zip(data.month_labels, (float(v) for v in yhat)))
    if cfg["out"]:
        _write_text(cfg["out"], text)
        print(f"wrote {len(yhat)} predictions to {cfg['out']}")
    else:
        sys.stdout.write(text)
    return 0


def _report_table(rows) -> str:
    lines = [f"{'model':<10} {'MSE':>12} {'MAPE(%)':>10} {'CV-RMSE(%)':>11} {'Time(s)':>9}"]
    for name, r in rows:
        lines.append(f"{name:<10} {r.mse:>12.6g} {r.mape_percent:>10.4f} "
                     f"{r.cv_rmse_percent:>11.4f} {r.elapsed_seconds:>9.2f}")
    return "\n".join(lines)


REPORT_HEADER = ["model", "n", "mse", "mape_percent", "cv_rmse_percent",
                 "cv_rmse_conventional_percent", "mse_standardized"]


def _report_row(name, r):
    return [name, r.n, r.mse, r.mape_percent, r.cv_rmse_percent,
            r.cv_rmse_conventional_percent, "" if r.mse_standardized is None else r.mse_standardized]


def cmd_evaluate(cfg) -> int:
    _require(cfg, "model", "data")
    p = dataio.load_model(cfg["model"])
    data = dataio.load_csv(cfg["data"])
    if cfg["test-rows"] is not None:
        # held-out months follow the training rows (default: the last test-rows months)
        n_test = cfg["test-rows"]
        start = cfg["train-rows"] if cfg["train-rows"] is not None else len(data) - n_test
        if n_test < 1 or start < 0 or start + n_test > len(data):
            raise dataio.SplitTooLargeError(
                f"cannot take {n_test} test months after row {start} of {len(data)}"
            )
        data = data.rows(start, start + n_test)
    t0 = time.perf_counter()
    yhat = pl.predict_pipeline(p, data.factors)
    elapsed = time.perf_counter() - t0
    r = metrics.evaluate(data.targets, yhat, elapsed, target_sd=p.scaler.target_sd)
    print(_report_table([(p.kind.value, r)]))
    if cfg["out"]:
        _write_text(cfg["out"], _csv_text(REPORT_HEADER + ["time_s"],
                                          [_report_row(p.kind.value, r) + [r.elapsed_seconds]]))
    return 0


COMPARE_ORDER = (pl.PipelineKind.RCNN_SVR, pl.PipelineKind.RCNN, pl.PipelineKind.SVR)


def cmd_compare(cfg) -> int:
    train, test = _experiment_split(cfg)
    out = Path(cfg["out"] or "compare_out")
    out.mkdir(parents=True, exist_ok=True)
    tc, hp = _train_config(cfg), _svr_hp(cfg)
    reports, pred_rows, timing_rows = [], [], []
    for kind in COMPARE_ORDER:
        start = time.perf_counter()
        p = pl.fit_pipeline(kind, train, tc, hp)
        yhat = pl.predict_pipeline(p, test.factors)
        elapsed = time.perf_counter() - start
        r = metrics.evaluate(test.targets, yhat, elapsed, target_sd=p.scaler.target_sd)
        reports.append((kind.value, r))
        timing_rows.append([kind.value, elapsed])
        for month, y, v in zip(test.month_labels, test.targets, yhat):
            pred_rows.append([month, kind.value, float(y), float(v)])
    _write_text(out / "comparison.csv", _csv_text(REPORT_HEADER, [_report_row(n, r) for n, r in reports]))
    _write_text(out / "predictions.csv", _csv_text(["month", "model", "y_true", "y_pred"], pred_rows))
    _write_text(out / "timings.csv", _csv_text(["model", "time_s"], timing_rows))
    _write_text(out / "config.txt", config_text("compare", cfg))
    print(_report_table(reports))
    print(f"wrote comparison.csv, predictions.csv, timings.csv to {out}")
    return 0


def cmd_layer_sweep(cfg) -> int:
    train, test = _experiment_split(cfg)
    entries = pl.layer_sweep(train, test, _train_config(cfg), _svr_hp(cfg))
    text = _csv_text(["layer_index", "layer_name", "mse"],
                     [(e.layer_index, e.layer_name, float(e.mse)) for e in entries])
    if cfg["out"]:
        _write_text(cfg["out"], text)
        print(f"wrote {len(entries)} layers to {cfg['out']}")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "layer-sweep": cmd_layer_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        cfg = resolve(args.command, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rcnn-svr: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rcnn-svr: error: cannot read config: {exc}", file=sys.stderr)
        return 1
    echo_config(args.command, cfg)
    try:
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rcnn-svr: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"rcnn-svr: error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except (RcnnSvrError, OSError, ValueError) as exc:
        print(f"rcnn-svr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

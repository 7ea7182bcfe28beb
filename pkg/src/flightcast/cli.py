"""flightcast command line: datagen | train | evaluate | forecast | compare.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric failure.
All commands are deterministic given the same inputs and seeds; the
``--deterministic`` flag additionally suppresses timestamps in log lines
and report metadata so repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field

from . import baselines, datagen, evaluation, models, pipeline
from .errors import ContractError, DataError, ModelFileError, NumericError

MODEL_KINDS = ("lr", "ar", "seq2seq", "seq2seq_attention")
MODES = ("aspm", "aspm+swim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_deterministic = False


def log(message):
    if _deterministic:
        print(message, file=sys.stderr)
    else:
        stamp = time.strftime("%Y-%m-%d %H:%M:%S")
        print(f"[{stamp}] {message}", file=sys.stderr)


class ConfigError(ContractError):
    pass


@dataclass
class RunConfig:
    """Everything a train/evaluate run needs, loaded from one JSON file."""

    mode: str = "aspm"
    kind: str = "seq2seq"
    data: str | None = None
    model_path: str | None = None
    report_path: str | None = None
    loss_path: str | None = None
    split: pipeline.SplitSpec | None = None
    model: dict = field(default_factory=dict)
    ar: dict = field(default_factory=dict)
    lr: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        if cfg.split is not None and not isinstance(cfg.split, pipeline.SplitSpec):
            cfg.split = pipeline.SplitSpec.from_dict(cfg.split)
        cfg.validate()
        return cfg

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.mode == "aspm" and self.model.get("use_swim"):
            raise ConfigError("aspm mode forbids swim features in the model config")

    @property
    def use_swim(self):
        return self.mode == "aspm+swim"

    def model_config(self):
        fields = dict(self.model)
        fields.setdefault("use_swim", self.use_swim and self.kind.startswith("seq2seq"))
        fields["use_attention"] = self.kind == "seq2seq_attention"
        return models.ModelConfig(**fields)

    def training_config(self):
        return models.TrainingConfig(**self.training)


def data_label(use_swim):
    return "ASPM+SWIM" if use_swim else "ASPM"


def _load_records(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            records = pipeline.parse_records(fh)
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {path}") from None
    return pipeline.clean_series(records)


# ---------------------------------------------------------------------------
# subcommands


def cmd_datagen(args):
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = datagen.SyntheticConfig(**json.load(fh))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except (json.JSONDecodeError, TypeError) as err:
        raise ConfigError(f"bad datagen config: {err}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    records = datagen.generate(cfg)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        pipeline.write_records_csv(records, fh)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def _fit_model(cfg, train_records, seed):
    mc = cfg.model_config()
    if cfg.kind == "ar":
        order = cfg.ar.get("order", 96)
        series = [r.dep_demand for r in train_records]
        ar = baselines.fit_ar(series, order)
        return models.ArForecaster(ar, n_look_ahead=mc.n_look_ahead), None
    if cfg.kind == "lr":
        windows = pipeline.make_windows(train_records, mc.n_lag, mc.n_look_ahead,
                                        with_swim=cfg.use_swim)
        include_calendar = cfg.lr.get("include_calendar", True)
        return baselines.fit_linear_model(windows, use_swim=cfg.use_swim,
                                          include_calendar=include_calendar), None
    scaler = pipeline.fit_scaler(train_records)
    windows = pipeline.make_windows(train_records, mc.n_lag, mc.n_look_ahead,
                                    with_swim=mc.use_swim)
    model = models.build_seq2seq(mc, scaler, seed=seed)
    tcfg = cfg.training_config()
    if seed is not None:
        tcfg.seed = seed
    log(f"training {cfg.kind} on {len(windows)} windows "
        f"({tcfg.epochs} epochs, batch {tcfg.batch_size})")
    history = models.train(model, windows, tcfg)
    for epoch, loss in enumerate(history, start=1):
        log(f"epoch {epoch}: loss {loss:.6f}")
    return model, history


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    if args.kind:
        cfg.kind = args.kind
        cfg.validate()
    if args.data:
        cfg.data = args.data
    if args.model:
        cfg.model_path = args.model
    if args.out:
        cfg.loss_path = args.out
    if cfg.data is None or cfg.model_path is None:
        raise ConfigError("train needs a data path and a model output path")
    if cfg.split is None:
        raise ConfigError("train needs a split specification")

    records = _load_records(cfg.data)
    train_records, _ = pipeline.split_train_test(records, cfg.split)
    if not train_records:
        raise ConfigError("train partition is empty")

    seed = args.seed if args.seed is not None else cfg.training.get("seed", 0)
    model, history = _fit_model(cfg, train_records, seed)
    models.save_model(model, cfg.model_path)
    if history is not None and cfg.loss_path:
        with open(cfg.loss_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss"])
            for epoch, loss in enumerate(history, start=1):
                writer.writerow([epoch, repr(loss)])
    print(f"saved {cfg.kind} model to {cfg.model_path}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = RunConfig.load(args.config)
    if args.data:
        cfg.data = args.data
    if args.model:
        cfg.model_path = args.model
    if args.out:
        cfg.report_path = args.out
    if cfg.data is None or cfg.model_path is None or cfg.report_path is None:
        raise ConfigError("evaluate needs data, model, and report paths")
    if cfg.split is None:
        raise ConfigError("evaluate needs a split specification")

    model = models.load_model(cfg.model_path)
    n_lag, n_look_ahead, with_swim = models.window_spec(model)
    if with_swim and not cfg.use_swim:
        raise ConfigError("model was trained with swim inputs but the run mode is 'aspm'")
    records = _load_records(cfg.data)
    if with_swim and any(r.swim_observed_departures is None for r in records):
        raise ConfigError("model needs swim inputs but the data lacks them")
    windows = pipeline.windows_for_test_range(records, cfg.split, n_lag, n_look_ahead,
                                              with_swim=with_swim)
    if not windows:
        raise ConfigError("no forecast origins fall inside the test range")

    log(f"scoring {len(windows)} forecast origins")
    predictions = models.predict_windows(model, windows)
    levels = evaluation.level_metrics(windows, predictions)

    report = {
        "kind": models.model_kind(model),
        "data": data_label(with_swim),
        "n_lag": n_lag,
        "n_look_ahead": n_look_ahead,
        "split": cfg.split.to_dict(),
        "origins": len(windows),
        "pooling": "all horizons of all test origins",
        "levels": {name: (m.to_dict() if m is not None else
                          {"mse": None, "mae": None, "explained_variance": None, "n": 0})
                   for name, m in levels.items()},
    }
    if not _deterministic:
        report["created_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    with open(cfg.report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")

    forecast_path = _forecast_csv_path(cfg.report_path)
    pairs = evaluation.pooled_forecast_pairs(windows, predictions)
    with open(forecast_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "actual", "predicted"])
        for stamp, actual, predicted in pairs:
            writer.writerow([pipeline.format_timestamp(stamp), repr(actual), repr(predicted)])

    quarter = levels["quarter"]
    print(f"quarter-hour mse {quarter.mse:.4f} mae {quarter.mae:.4f} "
          f"explained_variance {quarter.explained_variance:.4f} (n={quarter.n})")
    print(f"wrote report to {cfg.report_path} and forecasts to {forecast_path}")
    return EXIT_OK


def _forecast_csv_path(report_path):
    stem = report_path[:-5] if report_path.endswith(".json") else report_path
    return stem + ".forecast.csv"


def cmd_forecast(args):
    model = models.load_model(args.model)
    n_lag, n_look_ahead, with_swim = models.window_spec(model)
    records = _load_records(args.data)
    windows = pipeline.make_windows(records, n_lag, n_look_ahead, with_swim=with_swim)
    if args.origin:
        origin = pipeline.parse_timestamp(args.origin)
        matches = [w for w in windows if w.origin == origin]
        if not matches:
            raise ConfigError(f"no forecast origin at {args.origin} "
                              "(needs full history and a full look-ahead in the data)")
        window = matches[0]
    else:
        window = windows[-1]
    preds = models.predict_windows(model, [window])[0]
    rows = [(window.origin + pipeline.STEP * (i + 1), p) for i, p in enumerate(preds)]
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["timestamp", "predicted"])
            for stamp, pred in rows:
                writer.writerow([pipeline.format_timestamp(stamp), repr(float(pred))])
    for stamp, pred in rows:
        print(f"{pipeline.format_timestamp(stamp)} {pred:.3f}")
    return EXIT_OK


def cmd_compare(args):
    rows = []
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                report = json.load(fh)
            quarter = report["levels"]["quarter"]
            metrics = evaluation.MetricsReport(mse=quarter["mse"], mae=quarter["mae"],
                                               explained_variance=quarter["explained_variance"],
                                               n=quarter["n"])
            rows.append(evaluation.ComparisonRow(
                data_label=report["data"], model_label=report["kind"], metrics=metrics,
                n_lag=report["n_lag"], n_look_ahead=report["n_look_ahead"]))
        except FileNotFoundError:
            raise ConfigError(f"report not found: {path}") from None
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise ConfigError(f"unreadable report {path}: {err}") from None
    text, machine = evaluation.comparison_table(rows, sort_desc=args.sort)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(machine, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flightcast",
        description="Quarter-hour airport departure demand forecasting")
    parser.add_argument("--deterministic", action="store_true",
                        help="suppress timestamps so outputs are byte-identical across runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic demand CSV")
    p.add_argument("--config", required=True, help="SyntheticConfig JSON")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="fit a model on the train split")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--data", help="override the data CSV path")
    p.add_argument("--model", help="override the model output path")
    p.add_argument("--out", help="per-epoch loss CSV path")
    p.add_argument("--kind", choices=MODEL_KINDS)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model over the test range")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--data", help="override the data CSV path")
    p.add_argument("--model", help="override the model path")
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="forecast from one origin")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--origin", help="forecast origin timestamp (default: latest possible)")
    p.add_argument("--out", help="predictions CSV path")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("compare", help="combine evaluation reports into one table")
    p.add_argument("reports", nargs="+", help="evaluation report JSON files")
    p.add_argument("--out", help="machine-readable comparison JSON path")
    p.add_argument("--sort", action="store_true", help="sort rows by mse descending")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    global _deterministic
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code not in (0, None) else 0
    _deterministic = args.deterministic
    try:
        return args.func(args)
    except (ConfigError, DataError, ContractError, ModelFileError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

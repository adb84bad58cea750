"""``scalocast`` command line: ingest, preprocess, analyze, train, predict, baselines, protocols."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .baselines import LinearBaseline, seasonal_naive
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, ScalocastError
from .features import apply_scaler, chronological_split, fit_scaler
from .forecaster import (Forecaster, _report, compare_variants, load_dataset, rolling_evaluate,
                         run_experiment, samples_for, sweep, write_forecasts)
from .preprocess import clean_series, detect_outliers, repair_outliers, seasonal_decompose
from .series import (HourlySeries, format_timestamp, ingest_meter_files, read_demand_csv, write_demand_csv,
                     write_series_csv)
from .stats import component_correlations, lag_correlogram, stratified_report
from .synth import SynthConfig, generate, write_dataset

log = logging.getLogger("scalocast")


# ---------------------------------------------------------------- manifest

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int | None = None
    config_sha256: str | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=lambda: {
        "scalocast": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
        "python": platform.python_version()})
    started: str = ""
    finished: str = ""
    phases: dict[str, float] = field(default_factory=dict)

    def add_input(self, path) -> None:
        if path:
            self.inputs[str(path)] = file_digest(path)

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- shared helpers

def _config(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "demand", None):
        overrides["data.demand"] = args.demand
    if getattr(args, "weather", None):
        overrides["data.weather"] = dict(_weather_arg(w) for w in args.weather)
    if getattr(args, "holidays", None):
        overrides["data.holidays"] = args.holidays
    if getattr(args, "features", None):
        overrides["features"] = args.features.split(",")
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "max_epochs", None):
        overrides["training.max_epochs"] = args.max_epochs
    return cfg.replace(**overrides) if overrides else cfg


def _weather_arg(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep:
        raise ConfigError(f"--weather expects NAME=PATH, got {text!r}")
    return name, path


def _record_inputs(manifest: RunManifest, cfg: ExperimentConfig, args) -> None:
    manifest.seed = cfg.seed
    manifest.config_sha256 = cfg.digest()
    manifest.add_input(getattr(args, "config", None))
    manifest.add_input(cfg.data.demand)
    manifest.add_input(cfg.data.holidays)
    for p in cfg.data.weather.values():
        manifest.add_input(p)


def _dataset(cfg, manifest):
    with manifest.phase("preprocess"):
        return load_dataset(cfg.data, cfg.preprocess)


def _progress(verbose: bool):
    if not verbose:
        return None

    def report(epoch, h):
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch + 1, h.train_loss[-1], h.val_loss[-1], h.lr[-1])
    return report


# ---------------------------------------------------------------- subcommands

def cmd_ingest(args, manifest):
    paths = sorted(args.inputs)
    for p in paths:
        manifest.add_input(p)
    with manifest.phase("ingest"):
        demand, report = ingest_meter_files(paths, args.jobs)
    write_demand_csv(args.out / "demand.csv", demand)
    _write_json(args.out / "ingest_report.json", report.as_dict())
    log.info("ingested %d meters, %d hours", report.as_dict().get("meters", 0), len(demand.demand))


def cmd_preprocess(args, manifest):
    manifest.add_input(args.demand)
    demand = read_demand_csv(args.demand)
    with manifest.phase("preprocess"):
        report = detect_outliers(demand.demand, args.alpha, args.sg_window, args.sg_polyorder)
        repaired = repair_outliers(demand.demand, report, args.period)
    write_demand_csv(args.out / "demand_repaired.csv", type(demand)(repaired, demand.meter_count))
    with open(args.out / "outliers.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "timestamp", "value", "statistic"])
        for i, s in zip(report.indices, report.statistic):
            w.writerow([int(i), format_timestamp(demand.demand.timestamp(int(i))),
                        f"{demand.demand.values[i]:.6f}", repr(float(s))])
    log.info("flagged %d outliers (threshold %.3f)", len(report), report.threshold)


def cmd_analyze(args, manifest):
    cfg = _config(args)
    _record_inputs(manifest, cfg, args)
    ds, _ = _dataset(cfg, manifest)
    demand = ds.demand.demand
    lags = [24 * d for d in range(1, args.max_lag_days + 1)]
    with manifest.phase("analyze"):
        corr = lag_correlogram(demand.values, lags)
        dd = seasonal_decompose(demand, cfg.preprocess.period)
        comp = {name: component_correlations(dd, seasonal_decompose(ds.weather[name], cfg.preprocess.period))
                for name in sorted(ds.weather)}
    with open(args.out / "correlogram.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag_hours", "spearman"])
        for lag, rho in corr.items():
            w.writerow([lag, repr(rho)])
    with open(args.out / "component_corr.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "raw", "trend", "seasonal", "residual"])
        for name, c in comp.items():
            w.writerow([name] + [repr(c[k]) for k in ("raw", "trend", "seasonal", "residual")])
    if args.forecasts:
        rep = _report_from_forecasts(args.forecasts)
        _write_json(args.out / "stratified_metrics.json", stratified_report(rep, ds.calendar).as_dict())


def _report_from_forecasts(path):
    from datetime import date
    from .stats import MetricsReport
    days: dict = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if not row["actual"]:
                raise DataError(f"{path}: forecasts without actual values cannot be scored")
            days.setdefault(date.fromisoformat(row["date"]), []).append(
                (int(row["hour"]), float(row["actual"]), float(row["predicted"])))
    dates = sorted(days)
    actual = np.array([[a for _, a, _ in sorted(days[d])] for d in dates])
    pred = np.array([[p for _, _, p in sorted(days[d])] for d in dates])
    return MetricsReport.from_days(dates, actual, pred)


def cmd_train(args, manifest):
    cfg = _config(args)
    _record_inputs(manifest, cfg, args)
    ds, outliers = _dataset(cfg, manifest)
    with manifest.phase("train"):
        res = run_experiment(cfg, ds, args.out, _progress(args.verbose), outliers)
    cfg.save(args.out / "config.json")
    agg = res.report.aggregate()
    log.info("test MAE %.3f MAPE %.3f%%", agg["mae"]["mean"], agg["mape"]["mean"])


def cmd_predict(args, manifest):
    manifest.add_input(args.checkpoint)
    fc = Forecaster.load(args.checkpoint)
    cfg = fc.config
    data = cfg.data
    if args.demand:
        data.demand = args.demand
    if args.weather:
        data.weather = dict(_weather_arg(w) for w in args.weather)
    if args.holidays:
        data.holidays = args.holidays
    _record_inputs(manifest, cfg, args)
    ds, _ = _dataset(cfg, manifest)
    samples = samples_for(ds, cfg.features)
    if args.start:
        samples = [s for s in samples if s.forecast_date.isoformat() >= args.start]
    if args.end:
        samples = [s for s in samples if s.forecast_date.isoformat() <= args.end]
    if not samples:
        raise DataError("no eligible forecast days in the requested range")
    with manifest.phase("predict"):
        results = fc.predict(samples)
    write_forecasts(args.out / "forecasts.csv", results)


def cmd_baseline(args, manifest):
    cfg = _config(args)
    _record_inputs(manifest, cfg, args)
    ds, _ = _dataset(cfg, manifest)
    samples = samples_for(ds, cfg.features)
    split = chronological_split(samples, cfg.split.test_days, cfg.split.train_fraction)
    with manifest.phase("baseline"):
        if args.kind in ("naive24", "naive168"):
            pred = np.array([seasonal_naive(s, int(args.kind[5:])) for s in split.test])
        else:
            scaler = fit_scaler(split.train)
            pred = LinearBaseline().fit(apply_scaler(scaler, split.train)).predict(
                apply_scaler(scaler, split.test), scaler)
        rep = _report(split.test, pred)
    from .forecaster import ForecastResult
    from .series import rescale_total
    results = [ForecastResult(s.forecast_date, rescale_total(p, s.meter_count),
                              rescale_total(s.target, s.meter_count))
               for s, p in zip(split.test, pred)]
    write_forecasts(args.out / "forecasts.csv", results)
    _write_json(args.out / "metrics.json", {"kind": args.kind, "test": rep.aggregate(),
                                            "config_sha256": cfg.digest()})


def cmd_rolling(args, manifest):
    cfg = _config(args)
    _record_inputs(manifest, cfg, args)
    ds, _ = _dataset(cfg, manifest)
    with manifest.phase("rolling"):
        folds = rolling_evaluate(cfg, ds, args.out, _progress(args.verbose))
    _write_json(args.out / "rolling.json", [
        {"fold": k, "train_years": f.train_years, "test_year": f.test_year,
         "median_mae": f.median_mae, "test": f.result.report.aggregate()}
        for k, f in enumerate(folds, 1)])


def cmd_sweep(args, manifest):
    cfg = _config(args)
    _record_inputs(manifest, cfg, args)
    ds, _ = _dataset(cfg, manifest)
    with manifest.phase("sweep"):
        rows = sweep(cfg, ds, args.out, _progress(args.verbose))
    _write_json(args.out / "sweep.json", rows)


def cmd_experiment(args, manifest):
    cfg = _config(args)
    _record_inputs(manifest, cfg, args)
    ds, _ = _dataset(cfg, manifest)
    with manifest.phase("experiment"):
        summary = compare_variants(cfg, ds, args.out, _progress(args.verbose))
    _write_json(args.out / "comparison.json", summary)
    with open(args.out / "ranking.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "variant", "mae", "mape", "mse"])
        for r in summary["ranking"]:
            w.writerow([r["rank"], r["variant"], repr(r["mae"]), repr(r["mape"]), repr(r["mse"])])


def cmd_synth(args, manifest):
    cfg = SynthConfig(seed=args.seed, start_year=args.start_year, years=args.years,
                      meters_growth=0.0 if args.stationary else SynthConfig.meters_growth)
    manifest.seed = args.seed
    with manifest.phase("synth"):
        write_dataset(generate(cfg), args.out)


# ---------------------------------------------------------------- parser

def _add_data_args(p, config=True):
    if config:
        p.add_argument("--config", type=Path, help="experiment config (JSON); defaults otherwise")
    p.add_argument("--demand", help="district demand CSV (timestamp,demand[,meter_count])")
    p.add_argument("--weather", action="append", metavar="NAME=PATH", help="weather CSV, repeatable")
    p.add_argument("--holidays", help="holiday file (YYYY-MM-DD,name)")


def _add_run_args(p):
    _add_data_args(p)
    p.add_argument("--features", help="comma-separated feature names, overriding the config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalocast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads (BLAS and readers)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="cumulative meter CSVs -> district demand CSV")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="detect and repair demand outliers")
    p.add_argument("--demand", required=True)
    p.add_argument("--sg-window", type=int, default=7)
    p.add_argument("--sg-polyorder", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--period", type=int, default=24)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("analyze", help="lag correlogram, component correlations, stratified errors")
    _add_data_args(p)
    p.add_argument("--max-lag-days", type=int, default=28)
    p.add_argument("--forecasts", help="forecasts.csv to stratify by day type")
    p.set_defaults(func=cmd_analyze)

    for name, func, text in (("train", cmd_train, "train and evaluate one model"),
                             ("rolling", cmd_rolling, "expanding calendar-year folds"),
                             ("sweep", cmd_sweep, "hyperparameter grid from the config"),
                             ("experiment", cmd_experiment, "compare feature-set variants")):
        p = sub.add_parser(name, help=text)
        _add_run_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="forecast with a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p, config=False)
    p.add_argument("--start", help="first forecast date (YYYY-MM-DD)")
    p.add_argument("--end", help="last forecast date (YYYY-MM-DD)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="seasonal-naive or linear reference forecasts")
    _add_run_args(p)
    p.add_argument("--kind", choices=("naive24", "naive168", "linear"), required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--years", type=int, default=4)
    p.add_argument("--start-year", type=int, default=2016)
    p.add_argument("--stationary", action="store_true", help="constant meter count")
    p.set_defaults(func=cmd_synth)

    for p in sub.choices.values():
        p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    manifest = RunManifest(args.command, started=_now())
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(args.jobs):
            args.func(args, manifest)
    except ScalocastError as exc:
        print(f"scalocast {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"scalocast {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    manifest.finished = _now()
    manifest.write(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Model assembly, training runs, checkpoints and evaluation protocols."""
from __future__ import annotations

import base64
import csv
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import LinearBaseline, seasonal_naive
from .config import DataConfig, ExperimentConfig, ModelConfig, PreprocessConfig
from .cwt import build_batch
from .errors import ConfigError, ContractError, DataError, NumericError, UndefinedStatisticError
from .features import (HORIZON, Dataset, SampleWindow, Scaler, Split, apply_scaler, build_samples,
                       channel_layout, chronological_split, fit_scaler, parse_features, stack)
from .nn import Conv2D, Dense, Dropout, Flatten, MaxPool2D, Network, TrainHistory, train
from .preprocess import OutlierReport, clean_series
from .series import DistrictDemand, HolidayCalendar, read_demand_csv, read_holidays, read_weather_csv, rescale_total
from .stats import Metrics, MetricsReport, metrics, wilcoxon_signed_rank

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "scalocast-checkpoint/1"
_SCALER_FIELDS = ("channel_mean", "channel_std", "target_mean", "target_std")


# ---------------------------------------------------------------- model

def expected_param_count(n_channels: int, filters: Sequence[int], dense: Sequence[int],
                         n_scales: int = 24, width: int = HORIZON, pooling: bool = False,
                         horizon: int = HORIZON) -> int:
    """Closed-form parameter count of the conv/dense stack."""
    total, cin, h, w = 0, n_channels, n_scales, width
    for f in filters:
        total += 9 * cin * f + f
        cin = f
        if pooling:
            h, w = h // 2, w // 2
    din = h * w * cin
    for d in list(dense) + [horizon]:
        total += din * d + d
        din = d
    return total


def build_model(model: ModelConfig, n_channels: int, n_scales: int = 24,
                horizon: int = HORIZON) -> Network:
    """Conv stack -> flatten -> leaky-ReLU dense layers -> dropout -> linear output."""
    if n_channels < 1:
        raise ConfigError("the model needs at least one input channel")
    layers, cin = [], n_channels
    for f in model.filters:
        layers.append(Conv2D(cin, f))
        if model.pooling:
            layers.append(MaxPool2D())
        cin = f
    layers.append(Flatten())
    net = Network(layers, (n_scales, HORIZON, n_channels))
    din = net.output_shape[0]
    for d in model.dense:
        layers.append(Dense(din, d))
        din = d
    layers.append(Dropout(model.dropout))
    layers.append(Dense(din, horizon, "identity"))
    net = Network(layers, (n_scales, HORIZON, n_channels))
    want = expected_param_count(n_channels, model.filters, model.dense, n_scales, HORIZON,
                                model.pooling, horizon)
    if net.param_count() != want:
        raise ContractError(f"model has {net.param_count()} parameters, expected {want}")
    return net


# ---------------------------------------------------------------- data

def load_dataset(data: DataConfig, prep: PreprocessConfig,
                 demand: DistrictDemand | None = None,
                 weather: dict | None = None,
                 calendar: HolidayCalendar | None = None) -> tuple[Dataset, OutlierReport]:
    """Read (or take) the raw inputs, repair demand outliers and gaps, gap-fill weather."""
    if demand is None:
        if not data.demand:
            raise ConfigError("no demand file configured")
        demand = read_demand_csv(data.demand)
    if weather is None:
        weather = {name: read_weather_csv(path) for name, path in sorted(data.weather.items())}
    if calendar is None:
        calendar = read_holidays(data.holidays) if data.holidays else HolidayCalendar()
    series, report = clean_series(demand.demand, prep.alpha, prep.sg_window, prep.sg_polyorder,
                                  prep.period, detect=prep.repair)
    weather = {k: clean_series(v, period=prep.period, detect=False)[0] for k, v in weather.items()}
    ds = Dataset(DistrictDemand(series, demand.meter_count), weather, calendar, data.tz, prep.period)
    return ds, report


def samples_for(ds: Dataset, features: Sequence[str]) -> list[SampleWindow]:
    return build_samples(ds, parse_features(features))


# ---------------------------------------------------------------- forecaster

@dataclass
class ForecastResult:
    forecast_date: date
    predicted: np.ndarray
    actual: np.ndarray | None = None
    metrics: Metrics | None = None


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


class Forecaster:
    """A trained network plus everything needed to turn samples into kWh forecasts."""

    def __init__(self, config: ExperimentConfig, channel_names: Sequence[str]):
        self.config = config
        self.channel_names = tuple(channel_names)
        self.network = build_model(config.model, len(self.channel_names), len(config.wavelet.scales))
        self.scaler: Scaler | None = None
        self.history: TrainHistory | None = None

    def tensors(self, samples: Sequence[SampleWindow]) -> np.ndarray:
        """Scalogram batch of standardized channels. Targets are never touched."""
        if self.scaler is None:
            raise ContractError("forecaster has no fitted scaler")
        for s in samples:
            if s.channel_names != self.channel_names:
                raise ContractError(f"sample channels {s.channel_names} != model {self.channel_names}")
        x = np.stack([self.scaler.transform_channels(s.channels) for s in samples])
        w = self.config.wavelet
        return build_batch(x, w.scales, w.family)

    def fit(self, train_samples, val_samples, rng: np.random.Generator | None = None,
            progress=None) -> TrainHistory:
        rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self.scaler = fit_scaler(train_samples)
        ytr = self.scaler.transform_target(stack(train_samples)[1])
        yva = self.scaler.transform_target(stack(val_samples)[1])
        self.network.init(rng)
        self.history = train(self.network, self.tensors(train_samples), ytr,
                             self.tensors(val_samples), yva, self.config.training, rng,
                             progress=progress)
        return self.history

    def predict_per_meter(self, samples: Sequence[SampleWindow]) -> np.ndarray:
        if not samples:
            return np.zeros((0, HORIZON))
        z = self.network.predict(self.tensors(samples))
        out = self.scaler.inverse_target(z)
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite forecast")
        return out

    def predict(self, samples: Sequence[SampleWindow]) -> list[ForecastResult]:
        per_meter = self.predict_per_meter(samples)
        results = []
        for s, p in zip(samples, per_meter):
            pred = rescale_total(p, s.meter_count)
            actual = rescale_total(s.target, s.meter_count)
            results.append(ForecastResult(s.forecast_date, pred, actual, metrics(actual, pred)))
        return results

    # checkpoints ------------------------------------------------------------

    def to_dict(self) -> dict:
        if self.scaler is None or not self.network.initialized:
            raise ContractError("cannot checkpoint an untrained forecaster")
        return {"format": CHECKPOINT_FORMAT, "version": __version__,
                "config": self.config.to_dict(), "channel_names": list(self.channel_names),
                "layers": self.network.spec(), "input_shape": list(self.network.input_shape),
                "scaler": {k: _encode(getattr(self.scaler, k)) for k in _SCALER_FIELDS},
                "params": [_encode(p) for p in self.network.params]}

    def save(self, path) -> None:
        text = json.dumps(self.to_dict(), sort_keys=True, indent=1)
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Forecaster":
        from .config import from_dict
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from None
        if d.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
        fc = cls(from_dict(d["config"]), d["channel_names"])
        if fc.network.spec() != d["layers"]:
            raise ContractError("checkpoint layer table does not match its config")
        fc.network.set_params([_decode(p) for p in d["params"]])
        sc = d["scaler"]
        fc.scaler = Scaler(fc.channel_names, *(_decode(sc[k]) for k in _SCALER_FIELDS))
        return fc


# ---------------------------------------------------------------- experiment runs

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    forecaster: Forecaster
    split: Split
    results: list[ForecastResult]
    report: MetricsReport
    baselines: dict[str, MetricsReport] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    outliers: OutlierReport | None = None

    def metrics_dict(self) -> dict:
        """Everything deterministic about the run (no wall-clock values)."""
        h = self.forecaster.history
        return {
            "name": self.config.name,
            "config_sha256": self.config.digest(),
            "seed": self.config.seed,
            "channels": list(self.forecaster.channel_names),
            "n_parameters": self.forecaster.network.param_count(),
            "samples": {"train": len(self.split.train), "val": len(self.split.val),
                        "test": len(self.split.test)},
            "epochs": len(h), "best_epoch": h.best_epoch + 1,
            "best_val_loss": min(h.val_loss),
            "test": self.report.aggregate(),
            "baselines": {k: v.aggregate() for k, v in sorted(self.baselines.items())},
            "outliers_repaired": 0 if self.outliers is None else len(self.outliers),
        }

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"metrics": out / "metrics.json", "forecasts": out / "forecasts.csv",
                 "loss_curve": out / "loss_curve.csv", "timing": out / "timing.json",
                 "checkpoint": out / "model.json"}
        paths["metrics"].write_text(json.dumps(self.metrics_dict(), indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
        write_forecasts(paths["forecasts"], self.results)
        with open(paths["loss_curve"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in self.forecaster.history.as_rows():
                w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"]), repr(row["lr"])])
        timing = dict(self.timing)
        secs = self.forecaster.history.seconds
        timing["epoch_mean"] = float(np.mean(secs)) if secs else 0.0
        paths["timing"].write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.forecaster.save(paths["checkpoint"])
        return paths


def write_forecasts(path, results: Sequence[ForecastResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "hour", "actual", "predicted"])
        for r in results:
            for h in range(len(r.predicted)):
                actual = "" if r.actual is None else f"{r.actual[h]:.6f}"
                w.writerow([r.forecast_date.isoformat(), h, actual, f"{r.predicted[h]:.6f}"])


def _report(samples: Sequence[SampleWindow], per_meter_pred: np.ndarray) -> MetricsReport:
    actual = np.array([rescale_total(s.target, s.meter_count) for s in samples])
    pred = np.array([rescale_total(p, s.meter_count) for s, p in zip(samples, per_meter_pred)])
    return MetricsReport.from_days([s.forecast_date for s in samples], actual, pred)


def baseline_reports(split: Split, kinds=("naive24", "naive168", "linear")) -> dict[str, MetricsReport]:
    """Test-set reports for the baselines whose inputs the feature set provides."""
    out = {}
    test = split.test
    if not test:
        return out
    names = test[0].channel_names
    for kind, lag in (("naive24", 24), ("naive168", 168)):
        if kind in kinds and (f"c{lag}" in names or (lag == 168 and "holiday_lag" in names)):
            out[kind] = _report(test, np.array([seasonal_naive(s, lag) for s in test]))
    if "linear" in kinds and len(split.train) >= 2:
        scaler = fit_scaler(split.train)
        lin = LinearBaseline().fit(apply_scaler(scaler, split.train))
        out["linear"] = _report(test, lin.predict(apply_scaler(scaler, test), scaler))
    return out


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None,
                   out_dir=None, progress=None, outliers: OutlierReport | None = None) -> ExperimentResult:
    """Split, train, evaluate on the test days and (optionally) write all artifacts."""
    timing = {}
    t0 = time.perf_counter()
    if dataset is None:
        dataset, outliers = load_dataset(cfg.data, cfg.preprocess)
    timing["preprocess"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    samples = samples_for(dataset, cfg.features)
    split = chronological_split(samples, cfg.split.test_days, cfg.split.train_fraction)
    timing["features"] = time.perf_counter() - t0
    return _fit_and_evaluate(cfg, split, timing, out_dir, progress, outliers)


def _fit_and_evaluate(cfg, split: Split, timing: dict, out_dir=None, progress=None,
                      outliers=None) -> ExperimentResult:
    if len(split.train) < 2 or not split.val:
        raise DataError(f"not enough samples: {len(split.train)} train, {len(split.val)} val")
    if not split.test:
        raise DataError("empty test partition")
    names = split.train[0].channel_names
    fc = Forecaster(cfg, names)
    t0 = time.perf_counter()
    fc.fit(split.train, split.val, np.random.default_rng(cfg.seed), progress)
    timing["train"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    results = fc.predict(split.test)
    timing["predict"] = time.perf_counter() - t0
    report = MetricsReport([r.forecast_date for r in results], [r.metrics for r in results])
    base = baseline_reports(split) if cfg.baselines else {}
    res = ExperimentResult(cfg, fc, split, results, report, base, timing, outliers)
    if out_dir is not None:
        res.write(out_dir)
    return res


# ---------------------------------------------------------------- protocols

@dataclass
class Fold:
    train_years: list[int]
    test_year: int
    result: ExperimentResult

    @property
    def per_day_mae(self) -> np.ndarray:
        return self.result.report.values("mae")

    @property
    def median_mae(self) -> float:
        return float(np.median(self.per_day_mae))


def rolling_evaluate(cfg: ExperimentConfig, dataset: Dataset, out_dir=None,
                     progress=None) -> list[Fold]:
    """Expanding-window folds by calendar year: train on years 1..k, test on year k+1."""
    samples = samples_for(dataset, cfg.features)
    years = sorted({s.forecast_date.year for s in samples})
    if len(years) < 2:
        raise ConfigError(f"rolling evaluation needs at least two calendar years, got {years}")
    folds = []
    for k in range(1, len(years)):
        block = [s for s in samples if s.forecast_date.year in years[:k]]
        test = [s for s in samples if s.forecast_date.year == years[k]]
        inner = chronological_split(block, 0, cfg.split.train_fraction)
        split = Split(inner.train, inner.val, test)
        sub = None if out_dir is None else Path(out_dir) / f"fold{k}_{years[k]}"
        log.info("fold %d: train %s, test %d", k, years[:k], years[k])
        res = _fit_and_evaluate(cfg, split, {}, sub, progress)
        folds.append(Fold(list(years[:k]), years[k], res))
    return folds


def sweep_configs(cfg: ExperimentConfig) -> list[tuple[dict, ExperimentConfig]]:
    """Cartesian product of the non-empty sweep lists."""
    s = cfg.sweep
    axes = {"wavelet.family": s.family, "model.dropout": s.dropout,
            "model.dense": s.dense, "model.pooling": s.pooling}
    axes = {k: v for k, v in axes.items() if v}
    out = []
    for combo in itertools.product(*axes.values()):
        changes = dict(zip(axes.keys(), combo))
        out.append((changes, cfg.replace(**changes)))
    return out or [({}, cfg)]


def sweep(cfg: ExperimentConfig, dataset: Dataset, out_dir=None, progress=None) -> list[dict]:
    """Train every sweep combination; rows sorted by best validation loss."""
    rows = []
    for k, (changes, sub) in enumerate(sweep_configs(cfg)):
        d = None if out_dir is None else Path(out_dir) / f"run{k:03d}"
        res = run_experiment(sub, dataset, d, progress)
        rows.append({"run": k, **{key: changes[key] for key in sorted(changes)},
                     "best_val_loss": min(res.forecaster.history.val_loss),
                     "test_mae": res.report.aggregate()["mae"]["mean"]})
    rows.sort(key=lambda r: (r["best_val_loss"], r["run"]))
    return rows


def compare_variants(cfg: ExperimentConfig, dataset: Dataset, out_dir=None,
                     progress=None) -> dict:
    """One model per feature-set variant, a ranked table and pairwise Wilcoxon p-values."""
    if not cfg.variants:
        raise ConfigError("config lists no feature-set variants")
    runs = {}
    for name, feats in cfg.variants.items():
        d = None if out_dir is None else Path(out_dir) / name
        runs[name] = run_experiment(cfg.replace(features=list(feats), name=name), dataset, d, progress)
    table = []
    for name, res in runs.items():
        agg = res.report.aggregate()
        table.append({"variant": name, "features": list(cfg.variants[name]),
                      "mae": agg["mae"]["mean"], "mape": agg["mape"]["mean"], "mse": agg["mse"]["mean"]})
    table.sort(key=lambda r: (r["mae"], r["variant"]))
    for rank, row in enumerate(table, 1):
        row["rank"] = rank
    pairs = []
    for a, b in itertools.combinations(sorted(runs), 2):
        ra, rb = runs[a].report, runs[b].report
        common = sorted(set(ra.dates) & set(rb.dates))
        xa = ra.subset(common).values("mae")
        xb = rb.subset(common).values("mae")
        try:
            p = wilcoxon_signed_rank(xa, xb)
        except UndefinedStatisticError:
            p = None
        pairs.append({"a": a, "b": b, "n_days": len(common), "p_value": p})
    return {"ranking": table, "wilcoxon": pairs}

"""Per-day sample windows: demand lags, decomposed channels, calendar encodings, scaling.

A sample targets the 24 hours that start at local midnight of its forecast
date. Lagged channels hold the 24 values ``lag`` hours before each target
hour, so every data-derived channel ends before the target starts. Decomposed
channels come from a causal decomposition of the whole series, so their
components do not see the target day either.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .preprocess import DecomposedSeries, causal_decompose
from .series import (HOUR, WEATHER_FEATURES, DistrictDemand, HolidayCalendar, HourlySeries,
                     local_dates, local_midnight_index)

log = logging.getLogger(__name__)

HORIZON = 24
DEMAND_COMPONENTS = ("raw", "trend", "seasonal", "residual")
WEATHER_COMPONENTS = ("raw", "trend", "residual")
_KINDS = ("demand-lag", "weather", "cyclical", "holiday-categorical")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    lag_hours: int = 24
    decomposed: bool = False
    holiday_lag_substitution: bool = False
    source: str = "demand"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if self.kind == "demand-lag" and self.lag_hours < HORIZON:
            raise ConfigError(f"{self.name}: lags below {HORIZON} hours would read the target day")
        if self.holiday_lag_substitution and self.lag_hours != 168:
            raise ConfigError("holiday lag substitution only replaces the 168-hour lag")

    @property
    def components(self) -> tuple[str, ...]:
        if not self.decomposed:
            return ("raw",)
        return DEMAND_COMPONENTS if self.kind == "demand-lag" else WEATHER_COMPONENTS

    def channel_names(self) -> list[str]:
        if self.kind == "cyclical":
            return [f"{self.name}.sin", f"{self.name}.cos"]
        if self.kind == "holiday-categorical":
            return [self.name]
        base = self.name.removesuffix(".d")
        return [base if c == "raw" else f"{base}.{c}" for c in self.components]


def parse_feature(name: str) -> FeatureSpec:
    """Feature from its config name: ``c24``, ``c168.d``, ``t_amb.d``, ``holiday_lag``, ..."""
    decomposed = name.endswith(".d")
    base = name.removesuffix(".d")
    m = re.fullmatch(r"c(\d+)", base)
    if m:
        return FeatureSpec(name, "demand-lag", int(m.group(1)), decomposed)
    if base == "holiday_lag":
        return FeatureSpec(name, "demand-lag", 168, decomposed, holiday_lag_substitution=True)
    if base in WEATHER_FEATURES:
        return FeatureSpec(name, "weather", 24, decomposed, source=base)
    if name == "holiday_cat":
        return FeatureSpec(name, "holiday-categorical")
    if name == "time_cyc":
        return FeatureSpec(name, "cyclical")
    raise ConfigError(f"unknown feature {name!r}")


def parse_features(names: Sequence[str]) -> list[FeatureSpec]:
    specs = [parse_feature(n) for n in names]
    channels = [c for s in specs for c in s.channel_names()]
    if len(set(channels)) != len(channels):
        raise ConfigError(f"feature list {list(names)} produces duplicate channels")
    return specs


def channel_layout(specs: Sequence[FeatureSpec]) -> tuple[str, ...]:
    return tuple(c for s in specs for c in s.channel_names())


# ---------------------------------------------------------------- dataset

def reindex(series: HourlySeries, start: datetime, n: int) -> HourlySeries:
    """Crop/extend ``series`` onto the grid ``start + i hours``; new hours are masked."""
    off = (series.start - start) // HOUR
    values = np.zeros(n)
    mask = np.ones(n, bool)
    lo, hi = max(off, 0), min(off + len(series), n)
    if lo < hi:
        values[lo:hi] = series.values[lo - off:hi - off]
        mask[lo:hi] = series.mask[lo - off:hi - off]
    return HourlySeries(start, values, series.unit, mask, series.name)


@dataclass
class Dataset:
    """Repaired demand plus weather on the same hourly grid, and the holiday calendar."""

    demand: DistrictDemand
    weather: dict[str, HourlySeries] = field(default_factory=dict)
    calendar: HolidayCalendar = field(default_factory=HolidayCalendar)
    tz: str = "Europe/Copenhagen"
    period: int = 24
    _decomp: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        d = self.demand.demand
        self.weather = {k: reindex(v, d.start, len(d)) for k, v in sorted(self.weather.items())}

    def series(self, source: str) -> HourlySeries:
        if source == "demand":
            return self.demand.demand
        try:
            return self.weather[source]
        except KeyError:
            raise ContractError(f"weather feature {source!r} not loaded") from None

    def decomposition(self, source: str) -> DecomposedSeries:
        """Causal decomposition of a source series: components at hour t use data up to t only."""
        if source not in self._decomp:
            s = self.series(source)
            if s.mask.any():
                s = s.with_values(s.interpolated(), np.zeros(len(s), bool))
            self._decomp[source] = causal_decompose(s, self.period)
        return self._decomp[source]

    def dates(self) -> list[date]:
        return local_dates(self.demand.demand, self.tz)

    def day_start(self, day: date) -> int:
        return local_midnight_index(self.demand.demand, day, self.tz)


@dataclass(frozen=True)
class SampleWindow:
    forecast_date: date
    start: datetime
    channel_names: tuple[str, ...]
    channels: np.ndarray
    target: np.ndarray
    meter_count: int
    latest_source: datetime | None = None

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[self.channel_names.index(name)]
        except ValueError:
            raise ContractError(f"sample has no channel {name!r}") from None


# ---------------------------------------------------------------- channel builders

def cyclical_encode(index, period) -> tuple[float, float]:
    if period <= 0:
        raise ConfigError("period must be positive")
    angle = 2 * np.pi * index / period
    return float(np.sin(angle)), float(np.cos(angle))


def holiday_categorical(day: date, calendar: HolidayCalendar) -> np.ndarray:
    return np.full(HORIZON, 1.0 if day in calendar else 0.0)


def _window(series: HourlySeries, i: int) -> np.ndarray | None:
    if i < 0 or i + HORIZON > len(series) or series.mask[i:i + HORIZON].any():
        return None
    return series.values[i:i + HORIZON]


def build_lag_channel(demand: HourlySeries, forecast_date: date, lag_hours: int,
                      tz: str = "UTC") -> np.ndarray | None:
    """Values ``lag_hours`` before each forecast hour; None if not fully available."""
    return _window(demand, local_midnight_index(demand, forecast_date, tz) - lag_hours)


def substitute_holiday_lag(forecast_date: date, calendar: HolidayCalendar, demand: HourlySeries,
                           tz: str = "UTC") -> np.ndarray | None:
    """Demand of the previous occurrence of the same holiday, else the 168-hour lag."""
    i = _holiday_source_index(forecast_date, calendar, demand, tz)
    return _window(demand, i)


def _holiday_source_index(day, calendar, demand, tz) -> int:
    prev = calendar.previous_occurrence(day)
    if prev is not None:
        j = local_midnight_index(demand, prev, tz)
        if _window(demand, j) is not None:
            return j
    return local_midnight_index(demand, day, tz) - 168


def _demand_channels(ds: Dataset, spec: FeatureSpec, day: date, start: int):
    if spec.holiday_lag_substitution:
        src = _holiday_source_index(day, ds.calendar, ds.demand.demand, ds.tz)
    else:
        src = start - spec.lag_hours
    return _component_windows(ds, "demand", spec, src)


def _component_windows(ds: Dataset, source: str, spec: FeatureSpec, i: int):
    raw = _window(ds.series(source), i)
    if raw is None:
        return None, None
    out = [raw]
    if spec.decomposed:
        dec = ds.decomposition(source)
        for comp in spec.components[1:]:
            w = _window(dec.component(comp), i)
            if w is None:
                return None, None
            out.append(w)
    return out, i + HORIZON - 1


def build_sample(ds: Dataset, specs: Sequence[FeatureSpec], day: date,
                 names: tuple[str, ...] | None = None) -> SampleWindow | None:
    """One sample for ``day``, or None when any channel or the target is unavailable."""
    demand = ds.demand.demand
    start = ds.day_start(day)
    target = _window(demand, start)
    if target is None:
        return None
    channels: list[np.ndarray] = []
    latest = -1
    for spec in specs:
        if spec.kind == "demand-lag":
            windows, last = _demand_channels(ds, spec, day, start)
        elif spec.kind == "weather":
            windows, last = _component_windows(ds, spec.source, spec, start - spec.lag_hours)
        elif spec.kind == "holiday-categorical":
            windows, last = [holiday_categorical(day, ds.calendar)], -1
        else:
            s, c = cyclical_encode(day.weekday(), 7)
            windows, last = [np.full(HORIZON, s), np.full(HORIZON, c)], -1
        if windows is None:
            return None
        channels.extend(windows)
        latest = max(latest, last)
    if latest >= start:
        raise DataError(f"feature window for {day} reads data at or after the target start")
    return SampleWindow(
        forecast_date=day,
        start=demand.timestamp(start),
        channel_names=names or channel_layout(specs),
        channels=np.array(channels),
        target=target.copy(),
        meter_count=int(ds.demand.meter_count[start]),
        latest_source=demand.timestamp(latest) if latest >= 0 else None,
    )


def build_samples(ds: Dataset, specs: Sequence[FeatureSpec]) -> list[SampleWindow]:
    """One sample per eligible civil day, in date order."""
    names = channel_layout(specs)
    samples = [s for day in ds.dates() if (s := build_sample(ds, specs, day, names)) is not None]
    if not samples:
        log.warning("no eligible samples for features %s", [s.name for s in specs])
    return samples


def stack(samples: Sequence[SampleWindow]) -> tuple[np.ndarray, np.ndarray]:
    """(N, F, 24) channels and (N, 24) targets."""
    if not samples:
        return np.zeros((0, 0, HORIZON)), np.zeros((0, HORIZON))
    return (np.stack([s.channels for s in samples]), np.stack([s.target for s in samples]))


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class Scaler:
    """Per-channel z-scores and per-horizon-hour target z-scores, fitted on training data."""

    channel_names: tuple[str, ...]
    channel_mean: np.ndarray
    channel_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def check(self, names: Sequence[str]) -> None:
        if tuple(names) != self.channel_names:
            raise ContractError(f"channel layout {tuple(names)} != fitted {self.channel_names}")

    def transform_channels(self, x):
        return (np.asarray(x) - self.channel_mean[:, None]) / self.channel_std[:, None]

    def inverse_channels(self, z):
        return np.asarray(z) * self.channel_std[:, None] + self.channel_mean[:, None]

    def transform_target(self, y):
        return (np.asarray(y) - self.target_mean) / self.target_std

    def inverse_target(self, z):
        return np.asarray(z) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {"channel_names": list(self.channel_names),
                "channel_mean": self.channel_mean.tolist(), "channel_std": self.channel_std.tolist(),
                "target_mean": self.target_mean.tolist(), "target_std": self.target_std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(tuple(d["channel_names"]), np.array(d["channel_mean"]), np.array(d["channel_std"]),
                   np.array(d["target_mean"]), np.array(d["target_std"]))


def _safe_std(a, axis):
    std = np.std(a, axis=axis)
    return np.where(std > 0, std, 1.0)


def fit_scaler(samples: Sequence[SampleWindow]) -> Scaler:
    if len(samples) < 2:
        raise DataError("need at least two training samples to fit a scaler")
    x, y = stack(samples)
    return Scaler(samples[0].channel_names, x.mean(axis=(0, 2)), _safe_std(x, (0, 2)),
                  y.mean(axis=0), _safe_std(y, 0))


def apply_scaler(scaler: Scaler, samples: Sequence[SampleWindow]) -> list[SampleWindow]:
    out = []
    for s in samples:
        scaler.check(s.channel_names)
        out.append(replace(s, channels=scaler.transform_channels(s.channels),
                           target=scaler.transform_target(s.target)))
    return out


def invert_scaler(scaler: Scaler, samples: Sequence[SampleWindow]) -> list[SampleWindow]:
    return [replace(s, channels=scaler.inverse_channels(s.channels),
                    target=scaler.inverse_target(s.target)) for s in samples]


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class Split:
    train: list[SampleWindow]
    val: list[SampleWindow]
    test: list[SampleWindow]


def chronological_split(samples: Sequence[SampleWindow], test_days: int = 364,
                        train_fraction: float = 0.8) -> Split:
    """Final ``test_days`` calendar days form the test set; the rest splits train/val in order."""
    samples = sorted(samples, key=lambda s: s.forecast_date)
    if not samples:
        raise DataError("no samples to split")
    if test_days > 0:
        first_test = samples[-1].forecast_date - timedelta(days=test_days - 1)
        rest = [s for s in samples if s.forecast_date < first_test]
        test = [s for s in samples if s.forecast_date >= first_test]
    else:
        rest, test = list(samples), []
    n_train = int(round(train_fraction * len(rest)))
    return Split(rest[:n_train], rest[n_train:], test)

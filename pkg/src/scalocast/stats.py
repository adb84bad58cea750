"""Forecast error metrics, rank statistics and stratified error analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .errors import ConfigError, DataError, UndefinedStatisticError
from .preprocess import DecomposedSeries
from .series import HolidayCalendar

MAPE_EPS = 1e-6
EXACT_WILCOXON_MAX_N = 25


@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float
    mse: float
    mape_excluded: int = 0

    def as_dict(self) -> dict:
        return {"mae": self.mae, "mape": self.mape, "mse": self.mse,
                "mape_excluded": self.mape_excluded}


def metrics(actual, predicted, eps: float = MAPE_EPS) -> Metrics:
    """MAE, MAPE (percent) and MSE.

    MAPE terms with ``|actual| < eps`` are left out and counted in
    ``mape_excluded``; MAPE is NaN when every term is excluded.
    """
    y = np.asarray(actual, dtype=np.float64).ravel()
    yhat = np.asarray(predicted, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ConfigError(f"length mismatch: {y.size} actual vs {yhat.size} predicted")
    if y.size == 0:
        raise ConfigError("metrics need at least one value")
    err = y - yhat
    keep = np.abs(y) >= eps
    mape = float(100 * np.mean(np.abs(err[keep] / y[keep]))) if keep.any() else float("nan")
    return Metrics(float(np.mean(np.abs(err))), mape, float(np.mean(err ** 2)), int((~keep).sum()))


@dataclass
class MetricsReport:
    """Per-day metrics with mean and standard deviation across days."""

    dates: list[date]
    per_day: list[Metrics]

    @classmethod
    def from_days(cls, dates: Sequence[date], actual, predicted) -> "MetricsReport":
        actual = np.asarray(actual, dtype=np.float64)
        predicted = np.asarray(predicted, dtype=np.float64)
        if actual.shape != predicted.shape or actual.ndim != 2 or len(dates) != len(actual):
            raise ConfigError("need (days, hours) arrays matching the date list")
        return cls(list(dates), [metrics(a, p) for a, p in zip(actual, predicted)])

    def __len__(self) -> int:
        return len(self.per_day)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.per_day], dtype=np.float64)

    def aggregate(self) -> dict:
        out: dict = {"n_days": len(self)}
        for name in ("mae", "mape", "mse"):
            v = self.values(name)
            v = v[np.isfinite(v)]
            out[name] = {"mean": float(v.mean()) if v.size else float("nan"),
                         "std": float(v.std()) if v.size else float("nan")}
        out["mape_excluded"] = int(sum(m.mape_excluded for m in self.per_day))
        return out

    def subset(self, keep: Iterable[date]) -> "MetricsReport":
        keep = set(keep)
        pairs = [(d, m) for d, m in zip(self.dates, self.per_day) if d in keep]
        return MetricsReport([d for d, _ in pairs], [m for _, m in pairs])


# ---------------------------------------------------------------- rank statistics

def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ConfigError("spearman inputs differ in length")
    if x.size < 2:
        raise ConfigError("spearman needs at least two pairs")
    rx, ry = sps.rankdata(x), sps.rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        raise UndefinedStatisticError("spearman correlation undefined for constant input")
    return float(np.clip(float(rx @ ry) / denom, -1.0, 1.0))


def _exact_signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[s] = number of sign assignments whose positive doubled-rank sum is s."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        counts[r:] = counts[r:] + counts[:total + 1 - r]
    return counts


def wilcoxon_signed_rank(a, b=None) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped. Up to 25 remaining pairs the null
    distribution is enumerated exactly (ties handled through average ranks);
    above that a tie-corrected normal approximation is used.
    """
    d = np.asarray(a, dtype=np.float64).ravel()
    if b is not None:
        bb = np.asarray(b, dtype=np.float64).ravel()
        if bb.shape != d.shape:
            raise ConfigError("wilcoxon inputs differ in length")
        d = d - bb
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise UndefinedStatisticError("all paired differences are zero")
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _exact_signed_rank_counts(doubled)
        s = int(round(2 * w_plus))
        lower = sum(counts[:s + 1])
        upper = sum(counts[s:])
        p = 2 * min(lower, upper) / (2 ** n)
        return float(min(p, 1.0))
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48
    if var <= 0:
        raise UndefinedStatisticError("signed-rank variance is zero")
    z = (w_plus - mean) / math.sqrt(var)
    return float(min(2 * sps.norm.sf(abs(z)), 1.0))


# ---------------------------------------------------------------- correlation analysis

def lag_correlogram(values, lags: Sequence[int]) -> dict[int, float]:
    """Spearman correlation of the series with itself shifted by each lag."""
    x = np.asarray(values, dtype=np.float64).ravel()
    out = {}
    for lag in lags:
        if lag <= 0 or lag > x.size - 2:
            raise ConfigError(f"lag {lag} outside 1..{x.size - 2}")
        out[int(lag)] = spearman(x[lag:], x[:-lag])
    return out


def component_correlations(demand: DecomposedSeries,
                           weather: DecomposedSeries) -> dict[str, float]:
    """Spearman correlation of matching components; masked hours are dropped pairwise."""
    if demand.observed.start != weather.observed.start or demand.parent_length != weather.parent_length:
        raise DataError("demand and weather decompositions span different hours")
    out = {}
    for name in ("raw", "trend", "seasonal", "residual"):
        a, b = demand.component(name), weather.component(name)
        keep = ~(a.mask | b.mask)
        out[name] = spearman(a.values[keep], b.values[keep])
    return out


# ---------------------------------------------------------------- stratification

def is_non_working(day: date, calendar: HolidayCalendar) -> bool:
    return day.weekday() >= 5 or day in calendar


def transition_label(day: date, calendar: HolidayCalendar) -> str:
    prev = day - timedelta(days=1)
    same = is_non_working(day, calendar) == is_non_working(prev, calendar)
    return "similar-transition" if same else "dissimilar-transition"


@dataclass
class StratifiedReport:
    """Metrics per group, for each stratification axis."""

    groups: dict[str, dict[str, MetricsReport]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {axis: {label: rep.aggregate() for label, rep in sorted(g.items())}
                for axis, g in self.groups.items()}


def stratify_days(days: Sequence[date], calendar: HolidayCalendar) -> dict[str, dict[str, list[date]]]:
    """Partition ``days`` along three axes: holiday, transition and named holiday."""
    axes: dict[str, dict[str, list[date]]] = {"holiday": {}, "transition": {}, "named_holiday": {}}
    for d in days:
        hol = d in calendar
        axes["holiday"].setdefault("holiday" if hol else "non-holiday", []).append(d)
        axes["transition"].setdefault(transition_label(d, calendar), []).append(d)
        axes["named_holiday"].setdefault(calendar.name_of(d) if hol else "non-holiday", []).append(d)
    return axes


def stratified_report(report: MetricsReport, calendar: HolidayCalendar) -> StratifiedReport:
    axes = stratify_days(report.dates, calendar)
    return StratifiedReport({axis: {label: report.subset(ds) for label, ds in groups.items()}
                             for axis, groups in axes.items()})

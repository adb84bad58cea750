"""Outlier detection/repair and classical additive seasonal decomposition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal, stats

from .errors import ConfigError, DataError
from .series import HourlySeries, Unit

MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class DecomposedSeries:
    """Additive decomposition ``observed = trend + seasonal + residual``.

    Components are masked where undefined: for the classical decomposition
    ``trend`` and ``residual`` at the first and last ``period // 2`` hours,
    for the causal one everything before enough history has accumulated.
    """

    observed: HourlySeries
    trend: HourlySeries
    seasonal: HourlySeries
    residual: HourlySeries
    period: int

    @property
    def parent_length(self) -> int:
        return len(self.observed)

    def component(self, name: str) -> HourlySeries:
        return {"raw": self.observed, "trend": self.trend,
                "seasonal": self.seasonal, "residual": self.residual}[name]


@dataclass(frozen=True)
class OutlierReport:
    indices: np.ndarray
    statistic: np.ndarray
    threshold: float
    alpha: float

    def __len__(self) -> int:
        return len(self.indices)


def savgol_smooth(series: HourlySeries, window: int = 169, polyorder: int = 3) -> HourlySeries:
    """Savitzky-Golay smoothing; edges use the polynomial of the nearest full window.

    Masked values are linearly interpolated first and stay masked in the output.
    """
    _check_savgol(len(series), window, polyorder)
    smoothed = signal.savgol_filter(series.interpolated(), window, polyorder, mode="interp")
    return series.with_values(smoothed)


def _check_savgol(n, window, polyorder):
    if window % 2 != 1 or window < 1:
        raise ConfigError(f"Savitzky-Golay window must be odd and positive, got {window}")
    if polyorder < 0 or window <= polyorder:
        raise ConfigError(f"need window > polyorder >= 0 (window={window}, polyorder={polyorder})")
    if n < window:
        raise ConfigError(f"series of length {n} shorter than window {window}")


def seasonal_decompose(series: HourlySeries, period: int = 24) -> DecomposedSeries:
    """Classical moving-average additive decomposition.

    The phase of index ``i`` is ``i % period`` counted from the series start.
    """
    if period < 2:
        raise ConfigError("period must be >= 2")
    if series.mask.any():
        raise DataError("decomposition needs a series without masked values; repair it first")
    x = series.values
    n = len(x)
    if n < 2 * period:
        raise ConfigError(f"series of length {n} shorter than two periods ({2 * period})")

    if period % 2 == 0:
        filt = np.r_[0.5, np.ones(period - 1), 0.5] / period
    else:
        filt = np.ones(period) / period
    half = period // 2
    trend = np.full(n, np.nan)
    trend[half:n - half] = np.convolve(x, filt, mode="valid")

    detrended = x - trend
    phase = np.arange(n) % period
    means = np.array([np.nanmean(detrended[phase == p]) for p in range(period)])
    means -= means.mean()
    seasonal = means[phase]
    residual = x - trend - seasonal

    undefined = np.isnan(trend)
    return DecomposedSeries(
        observed=series,
        trend=series.with_values(np.where(undefined, 0.0, trend), undefined),
        seasonal=series.with_values(seasonal, np.zeros(n, bool)),
        residual=series.with_values(np.where(undefined, 0.0, residual), undefined),
        period=period,
    )


def causal_decompose(series: HourlySeries, period: int = 24, seasonal_days: int = 28) -> DecomposedSeries:
    """Additive decomposition where every component at ``t`` uses only ``x[:t+1]``.

    The trend is the classical centred moving average evaluated ``period // 2``
    hours late (so it is trailing); the seasonal term is the mean of the last
    ``seasonal_days`` detrended values of the same phase, re-centred over the
    latest ``period`` phase means. Components are masked until defined.
    ``observed == trend + seasonal + residual`` holds wherever they are.
    """
    if period < 2 or seasonal_days < 1:
        raise ConfigError("period must be >= 2 and seasonal_days >= 1")
    if series.mask.any():
        raise DataError("decomposition needs a series without masked values; repair it first")
    x = series.values
    n = len(x)
    if n < 2 * period:
        raise ConfigError(f"series of length {n} shorter than two periods ({2 * period})")
    if period % 2 == 0:
        filt = np.r_[0.5, np.ones(period - 1), 0.5] / period
    else:
        filt = np.ones(period) / period
    span = len(filt) - 1
    trend = np.full(n, np.nan)
    trend[span:] = np.convolve(x, filt, mode="valid")

    detrended = x - trend
    phase_mean = np.full(n, np.nan)
    kernel = np.ones(seasonal_days) / seasonal_days
    for p in range(period):
        seq = detrended[p::period]
        if len(seq) >= seasonal_days:
            phase_mean[p::period][seasonal_days - 1:] = np.convolve(seq, kernel, mode="valid")
    centre = np.full(n, np.nan)
    centre[period - 1:] = np.convolve(phase_mean, np.ones(period) / period, mode="valid")
    seasonal = phase_mean - centre
    residual = x - trend - seasonal

    def part(v):
        bad = np.isnan(v)
        return series.with_values(np.where(bad, 0.0, v), bad)

    return DecomposedSeries(series, part(trend), part(seasonal), part(residual), period)


def _rolling_median(r: np.ndarray, window: int) -> np.ndarray:
    """Median over a centered window; edges reuse the nearest full window."""
    n = len(r)
    w = min(window, n if n % 2 else n - 1)
    half = w // 2
    med = np.median(np.lib.stride_tricks.sliding_window_view(r, w), axis=1)
    return np.r_[np.full(half, med[0]), med, np.full(n - half - len(med), med[-1])]


def _rolling_mad_scale(r: np.ndarray, window: int) -> np.ndarray:
    """1.4826 * MAD over a centered window; edges reuse the nearest full window."""
    return MAD_TO_SIGMA * _rolling_median(np.abs(r - _rolling_median(r, window)), window)


def bonferroni_threshold(alpha: float, n: int, dof: int) -> float:
    """Two-sided Student-t critical value at level alpha / (2 n)."""
    return float(stats.t.isf(alpha / (2 * n), dof))


def detect_outliers(series: HourlySeries, alpha: float = 0.05, window: int = 7,
                    polyorder: int = 3, scale_window: int = 169,
                    flag_negative: bool = True, max_iter: int = 5,
                    relative: bool | None = None) -> OutlierReport:
    """Flag points whose studentized Savitzky-Golay residual fails a Bonferroni t-test.

    The residual scale is a robust local one (MAD over ``scale_window``
    points), so the outliers themselves do not inflate it. With ``relative``
    (the default for kWh series) the MAD is taken over residuals divided by
    the smoothed level and multiplied back by it (never below half the
    absolute scale), matching noise that grows with the load. Negative values of a kWh series are always flagged.
    Masked points are not reported (they are repaired regardless).
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    _check_savgol(len(series), window, polyorder)
    x = series.interpolated()
    n = int((~series.mask).sum())
    threshold = bonferroni_threshold(alpha, max(n, 1), max(scale_window - polyorder - 1, 1))
    # residuals at round-off level must not look significant against a zero MAD
    floor = 1e-9 * max(float(np.abs(x).max()), np.finfo(float).tiny)
    if relative is None:
        relative = series.unit is Unit.KWH
    idx = np.arange(len(x))
    flags = np.zeros(len(x), bool)
    # a spike drags the local fit and swamps its neighbours: smooth a copy with
    # flagged points interpolated away and re-test everything until stable
    for _ in range(max_iter):
        clean = x if not flags.any() else np.interp(idx, idx[~flags], x[~flags])
        smooth = signal.savgol_filter(clean, window, polyorder, mode="interp")
        r = x - smooth
        if relative:
            typical = np.abs(smooth)
            level = np.maximum(typical, np.maximum(0.25 * _rolling_median(typical, scale_window), floor))
            # bounded below so deterministic, noise-free residuals stay quiet
            scale = np.maximum(_rolling_mad_scale(r / level, scale_window) * level,
                               0.5 * _rolling_mad_scale(r, scale_window))
        else:
            scale = _rolling_mad_scale(r, scale_window)
        stat = np.abs(r) / np.maximum(scale, floor)
        new = stat > threshold
        if np.array_equal(new, flags):
            break
        flags = new
    if flag_negative and series.unit is Unit.KWH:
        negative = x < 0
        stat = np.where(negative, np.inf, stat)
        flags |= negative
    flags &= ~series.mask
    idx = np.flatnonzero(flags)
    return OutlierReport(idx, stat[idx], threshold, alpha)


def repair_outliers(series: HourlySeries, report: OutlierReport, period: int = 24,
                    max_iter: int = 50, tol: float = 1e-12) -> HourlySeries:
    """Replace flagged and masked hours by trend + seasonal.

    The bad hours start from linear interpolation; the decomposition is then
    refitted with them set to the current trend + seasonal estimate until the
    fill stops changing. Where the centered trend is undefined (series edges),
    the nearest defined trend value is used. Repaired kWh values are floored
    at zero. All other values are returned unchanged.
    """
    bad = series.mask.copy()
    bad[np.asarray(report.indices, dtype=int)] = True
    if not bad.any():
        return series
    work = series.with_values(series.values, bad).interpolated()
    clear = np.zeros(len(series), bool)
    scale = max(float(np.abs(work).max()), 1.0)
    for _ in range(max_iter):
        dec = seasonal_decompose(series.with_values(work, clear), period)
        trend = dec.trend.values.copy()
        defined = np.flatnonzero(~dec.trend.mask)
        trend[:defined[0]] = trend[defined[0]]
        trend[defined[-1] + 1:] = trend[defined[-1]]
        fitted = trend + dec.seasonal.values
        step = np.abs(fitted[bad] - work[bad]).max()
        work[bad] = fitted[bad]
        if step <= tol * scale:
            break
    if series.unit is Unit.KWH:
        work[bad] = np.maximum(work[bad], 0.0)
    out = np.where(bad, work, series.values)
    return series.with_values(out, clear)


def clean_series(series: HourlySeries, alpha: float = 0.05, window: int = 7,
                 polyorder: int = 3, period: int = 24,
                 detect: bool = True) -> tuple[HourlySeries, OutlierReport]:
    """detect_outliers followed by repair_outliers. With ``detect=False`` only gaps are filled."""
    if detect:
        report = detect_outliers(series, alpha, window, polyorder)
    else:
        report = OutlierReport(np.array([], int), np.array([]), float("nan"), alpha)
    return repair_outliers(series, report, period), report

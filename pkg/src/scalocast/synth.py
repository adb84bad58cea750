"""Deterministic synthetic district-heating data for tests and desk-scale experiments."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
from dateutil.easter import easter

from .errors import ConfigError
from .series import (HOUR, DistrictDemand, HolidayCalendar, HourlySeries, Unit, format_timestamp,
                     write_demand_csv, write_holidays, write_series_csv)

# offset from Easter Sunday in days, or fixed (month, day)
_HOLIDAYS = (
    ("Nytårsdag", (1, 1)),
    ("Skærtorsdag", -3),
    ("Langfredag", -2),
    ("Påskedag", 0),
    ("Anden påskedag", 1),
    ("Store bededag", 26),
    ("Kristi himmelfartsdag", 39),
    ("Pinsedag", 49),
    ("Anden pinsedag", 50),
    ("Juledag", (12, 25)),
    ("Anden juledag", (12, 26)),
)


def danish_holidays(years) -> HolidayCalendar:
    """Danish public holidays for the given years (Store bededag only before 2024)."""
    entries = []
    for y in years:
        e = easter(y)
        for name, rule in _HOLIDAYS:
            if name == "Store bededag" and y >= 2024:
                continue
            d = date(y, *rule) if isinstance(rule, tuple) else e + timedelta(days=rule)
            entries.append((d, name))
    return HolidayCalendar(tuple(entries))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    start_year: int = 2016
    years: int = 4
    tz: str = "Europe/Copenhagen"
    base_load: float = 0.35          # kWh per meter, hot water
    heating_slope: float = 0.12      # kWh per meter per degree below the balance point
    balance_point: float = 17.0
    noise_frac: float = 0.03         # noise sd relative to the expected load
    spike_rate: float = 0.002        # fraction of hours carrying an injected spike
    spike_sigma: float = 10.0
    meters_start: int = 1500
    meters_growth: float = 0.05      # yearly fractional growth of the meter count
    weekend_factor: float = 0.93
    holiday_factor: float = 0.88


@dataclass
class SynthDataset:
    demand: DistrictDemand
    weather: dict[str, HourlySeries]
    calendar: HolidayCalendar
    outliers: np.ndarray
    config: SynthConfig


def _daily_profile(hour: np.ndarray, off_day: np.ndarray) -> np.ndarray:
    """Bimodal morning/evening shape; non-working days peak later and flatter."""
    morning = np.where(off_day, 9.0, 7.0)
    amp = np.where(off_day, 0.18, 0.28)
    return (0.85 + amp * np.exp(-(hour - morning) ** 2 / 8.0)
            + 0.15 * np.exp(-(hour - 19.0) ** 2 / 8.0))


def generate(cfg: SynthConfig = SynthConfig()) -> SynthDataset:
    if cfg.years < 2:
        raise ConfigError("synthetic data needs at least two years")
    zone = ZoneInfo(cfg.tz)
    start = datetime(cfg.start_year, 1, 1, tzinfo=zone).astimezone(timezone.utc)
    stop = datetime(cfg.start_year + cfg.years, 1, 1, tzinfo=zone).astimezone(timezone.utc)
    n = (stop - start) // HOUR
    rng = np.random.default_rng(cfg.seed)
    local = [(start + k * HOUR).astimezone(zone) for k in range(n)]
    hour = np.array([t.hour for t in local], dtype=float)
    doy = np.array([t.timetuple().tm_yday for t in local], dtype=float)
    days = [t.date() for t in local]
    calendar = danish_holidays(range(cfg.start_year, cfg.start_year + cfg.years))
    holiday = np.array([d in calendar for d in days])
    weekend = np.array([d.weekday() >= 5 for d in days])

    # temperature: annual cycle, diurnal cycle, AR(1) weather anomaly
    anomaly = np.empty(n)
    eps = rng.normal(0.0, 0.35, n)
    a = 0.0
    for k in range(n):
        a = 0.985 * a + eps[k]
        anomaly[k] = a
    t_amb = 8.0 - 9.0 * np.cos(2 * np.pi * (doy - 20) / 365.25) \
        - 3.0 * np.cos(2 * np.pi * (hour - 3) / 24) + anomaly
    trailing = np.lib.stride_tricks.sliding_window_view(np.r_[np.full(23, t_amb[0]), t_amb], 24)
    t_min, t_max = trailing.min(axis=1), trailing.max(axis=1)
    t_feels = t_amb - 1.5 - 0.8 * np.abs(rng.normal(0.0, 1.0, n))
    t_dew = t_amb - 3.0 - 2.0 * np.abs(np.convolve(rng.normal(0.0, 1.0, n), np.ones(12) / 12, "same"))

    # heat demand follows a lagged (building inertia) temperature
    lagged = np.empty(n)
    s = t_amb[0]
    for k in range(n):
        s += 0.12 * (t_amb[k] - s)
        lagged[k] = s
    off_day = weekend | holiday
    level = cfg.base_load + cfg.heating_slope * np.maximum(0.0, cfg.balance_point - lagged)
    level = level * _daily_profile(hour, off_day)
    level = level * np.where(weekend, cfg.weekend_factor, 1.0) * np.where(holiday, cfg.holiday_factor, 1.0)
    sigma = cfg.noise_frac * level
    demand = level + sigma * rng.normal(0.0, 1.0, n)

    n_spikes = int(round(cfg.spike_rate * n))
    spikes = np.sort(rng.choice(np.arange(24, n - 24), size=n_spikes, replace=False))
    demand[spikes] += cfg.spike_sigma * sigma[spikes]
    demand = np.maximum(demand, 0.0)

    month_index = np.array([(t.year - cfg.start_year) * 12 + t.month - 1 for t in local])
    meters = np.round(cfg.meters_start * (1 + cfg.meters_growth) ** (month_index / 12)).astype(np.int64)

    series = HourlySeries(start, demand, Unit.KWH, name="demand")
    weather = {name: HourlySeries(start, np.round(v, 3), Unit.CELSIUS, name=name)
               for name, v in (("t_amb", t_amb), ("t_min", t_min), ("t_max", t_max),
                               ("t_feels", t_feels), ("t_dew", t_dew))}
    return SynthDataset(DistrictDemand(series, meters), weather, calendar, spikes, cfg)


def write_dataset(ds: SynthDataset, out_dir) -> dict[str, Path]:
    """demand.csv, weather_<name>.csv, holidays.csv and outliers.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"demand": out / "demand.csv", "holidays": out / "holidays.csv",
             "outliers": out / "outliers.csv"}
    write_demand_csv(paths["demand"], ds.demand)
    for name, s in ds.weather.items():
        paths[name] = out / f"weather_{name}.csv"
        write_series_csv(paths[name], s, name)
    write_holidays(paths["holidays"], ds.calendar)
    with open(paths["outliers"], "w", newline="\n", encoding="utf-8") as fh:
        fh.write("index,timestamp\n")
        for i in ds.outliers:
            fh.write(f"{int(i)},{format_timestamp(ds.demand.demand.timestamp(int(i)))}\n")
    return paths


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)

from datetime import date

import numpy as np
import pytest

from scalocast import synth
from scalocast.errors import ConfigError
from scalocast.series import read_demand_csv, read_holidays, read_weather_csv
from scalocast.stats import spearman


def test_byte_identical_files(tmp_path):
    cfg = synth.SynthConfig(seed=3, years=2)
    a = synth.write_dataset(synth.generate(cfg), tmp_path / "a")
    b = synth.write_dataset(synth.generate(cfg), tmp_path / "b")
    assert sorted(a) == sorted(b)
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_files_read_back(tmp_path):
    ds = synth.generate(synth.SynthConfig(seed=0, years=2))
    paths = synth.write_dataset(ds, tmp_path)
    demand = read_demand_csv(paths["demand"])
    np.testing.assert_allclose(demand.demand.values, ds.demand.demand.values, rtol=0, atol=1e-6)
    np.testing.assert_array_equal(demand.meter_count, ds.demand.meter_count)
    assert read_holidays(paths["holidays"]) == ds.calendar
    t = read_weather_csv(paths["t_amb"])
    np.testing.assert_array_equal(t.values, ds.weather["t_amb"].values)


def test_shape_and_physics(synth3):
    d = synth3.demand.demand
    assert len(d) == 24 * (365 + 366 + 365)
    assert (d.values >= 0).all() and not d.mask.any()
    assert spearman(d.values, synth3.weather["t_amb"].values) < -0.8
    assert set(synth3.weather) == {"t_amb", "t_min", "t_max", "t_feels", "t_dew"}
    assert (np.diff(synth3.demand.meter_count) >= 0).all()


def test_outliers_recorded(synth3):
    cfg = synth3.config
    assert len(synth3.outliers) == round(cfg.spike_rate * len(synth3.demand.demand))
    assert (np.diff(synth3.outliers) > 0).all()


def test_seeds_differ():
    a = synth.generate(synth.SynthConfig(seed=0, years=2)).demand.demand.values
    b = synth.generate(synth.SynthConfig(seed=1, years=2)).demand.demand.values
    assert not np.array_equal(a, b)


def test_needs_two_years():
    with pytest.raises(ConfigError):
        synth.generate(synth.SynthConfig(years=1))


def test_danish_calendar():
    cal = synth.danish_holidays([2019, 2024])
    assert cal.name_of(date(2019, 12, 25)) == "Juledag"
    assert cal.name_of(date(2019, 4, 21)) == "Påskedag"
    assert cal.name_of(date(2019, 5, 17)) == "Store bededag"
    days = [d for d, _ in cal.entries]
    assert "Store bededag" not in {cal.name_of(d) for d in days if d.year == 2024}
    assert sum(d.year == 2019 for d in days) == 11

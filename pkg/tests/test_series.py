from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scalocast.errors import DataError, EmptyInputError
from scalocast.series import (HOUR, DistrictDemand, HolidayCalendar, HourlySeries, Unit, aggregate_district,
                              align_series, diff_cumulative, ingest_meter_files, local_dates,
                              local_midnight_index, read_demand_csv, read_holidays, read_weather_csv,
                              rescale_total, write_demand_csv, write_holidays)

from .conftest import T0, hourly


class TestHourlySeries:
    def test_start_must_be_on_the_hour(self):
        with pytest.raises(DataError):
            HourlySeries(T0 + timedelta(minutes=30), [1.0])

    def test_mask_length_checked(self):
        with pytest.raises(DataError):
            HourlySeries(T0, [1.0, 2.0], mask=[False])

    def test_arrays_read_only(self):
        s = hourly([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    def test_naive_start_is_utc(self):
        s = HourlySeries(datetime(2019, 1, 1), [1.0])
        assert s.start == T0

    @given(st.integers(0, 20000))
    def test_timestamps_are_24h_apart_across_dst(self, i):
        s = hourly(np.zeros(20100))
        assert s.timestamp(i + 24) - s.timestamp(i) == timedelta(hours=24)

    def test_interpolated_fills_gaps_linearly(self):
        s = hourly([0.0, 99.0, 2.0, 99.0], mask=[False, True, False, True])
        np.testing.assert_allclose(s.interpolated(), [0.0, 1.0, 2.0, 2.0])


class TestDiffCumulative:
    def test_hand_example(self):
        out, neg = diff_cumulative(hourly([10, 12, 15, 15]))
        np.testing.assert_array_equal(out.values, [2, 3, 0])
        assert not out.mask.any() and neg == []
        assert out.start == T0 + HOUR

    def test_meter_reset_is_masked_and_reported(self):
        out, neg = diff_cumulative(hourly([10, 5]))
        assert out.mask.tolist() == [True]
        assert neg == [0]

    def test_too_short(self):
        with pytest.raises(EmptyInputError):
            diff_cumulative(hourly([1.0]))

    @given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=200))
    def test_matches_pairwise_subtraction(self, increments):
        cum = np.cumsum(increments)
        out, neg = diff_cumulative(hourly(cum))
        oracle = [cum[i + 1] - cum[i] for i in range(len(cum) - 1)]
        np.testing.assert_allclose(out.values, oracle, rtol=0, atol=1e-9 * max(1.0, cum[-1]))
        assert neg == []

    @given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=100))
    def test_inverse_of_cumulative_sum(self, x):
        out, _ = diff_cumulative(hourly(np.cumsum(x)))
        np.testing.assert_allclose(out.values, x[1:], atol=1e-9)


class TestAggregate:
    def test_two_meters(self):
        d = aggregate_district([hourly([2, 4]), hourly([4, 8])])
        np.testing.assert_array_equal(d.demand.values, [3, 6])
        np.testing.assert_array_equal(d.meter_count, [2, 2])

    def test_masked_meter_hour(self):
        d = aggregate_district([hourly([0, 4], mask=[True, False]), hourly([4, 8])])
        np.testing.assert_array_equal(d.demand.values, [4, 6])
        np.testing.assert_array_equal(d.meter_count, [1, 2])

    def test_no_reporting_meter_masks_the_hour(self):
        d = aggregate_district([hourly([0, 4], mask=[True, False])])
        assert d.demand.mask.tolist() == [True, False]

    def test_hundred_meters_vs_direct_mean(self):
        rng = np.random.default_rng(1)
        vals = rng.uniform(0, 5, (100, 48))
        mask = rng.random((100, 48)) < 0.1
        d = aggregate_district([hourly(v, mask=m) for v, m in zip(vals, mask)])
        for h in range(48):
            ok = ~mask[:, h]
            assert d.meter_count[h] == ok.sum()
            assert d.demand.values[h] == pytest.approx(vals[ok, h].mean(), abs=1e-12)

    @given(st.permutations(list(range(6))))
    def test_permutation_invariant(self, order):
        rng = np.random.default_rng(2)
        meters = [hourly(rng.uniform(0, 3, 10)) for _ in range(6)]
        a = aggregate_district(meters)
        b = aggregate_district([meters[i] for i in order])
        np.testing.assert_allclose(a.demand.values, b.demand.values, atol=1e-12)

    def test_spans_must_match(self):
        with pytest.raises(DataError):
            aggregate_district([hourly([1, 2]), hourly([1, 2], start=T0 + HOUR)])

    def test_align_pads_with_mask(self):
        a, b = align_series([hourly([1, 2]), hourly([3], start=T0 + 2 * HOUR)])
        assert len(a) == len(b) == 3
        assert a.mask.tolist() == [False, False, True]
        assert b.mask.tolist() == [True, True, False]


class TestRescale:
    def test_hand_example(self):
        np.testing.assert_array_equal(rescale_total([3, 6], 2), [6, 12])

    def test_zero(self):
        np.testing.assert_array_equal(rescale_total(np.zeros(24), 7), np.zeros(24))

    def test_round_trip_recovers_sums(self):
        rng = np.random.default_rng(3)
        vals = rng.uniform(0, 4, (30, 24))
        d = aggregate_district([hourly(v) for v in vals])
        np.testing.assert_allclose(rescale_total(d.demand.values, d.meter_count), vals.sum(axis=0), rtol=1e-12)

    def test_meter_count_below_one_rejected(self):
        with pytest.raises(DataError):
            rescale_total([1.0], 0)


class TestCalendar:
    def test_duplicate_date_with_two_names_rejected(self):
        with pytest.raises(DataError):
            HolidayCalendar(((date(2019, 1, 1), "a"), (date(2019, 1, 1), "b")))

    def test_previous_occurrence(self):
        cal = HolidayCalendar(((date(2018, 12, 25), "Juledag"), (date(2019, 12, 25), "Juledag"),
                               (date(2019, 12, 26), "Anden juledag")))
        assert cal.previous_occurrence(date(2019, 12, 25)) == date(2018, 12, 25)
        assert cal.previous_occurrence(date(2018, 12, 25)) is None
        assert cal.previous_occurrence(date(2019, 12, 24)) is None

    def test_local_midnight_in_copenhagen(self):
        s = hourly(np.zeros(24 * 400), start=datetime(2018, 12, 31, 23, tzinfo=timezone.utc))
        assert local_midnight_index(s, date(2019, 1, 1), "Europe/Copenhagen") == 0
        # summer time: midnight is 22:00 UTC of the previous day
        i = local_midnight_index(s, date(2019, 7, 1), "Europe/Copenhagen")
        assert s.timestamp(i) == datetime(2019, 6, 30, 22, tzinfo=timezone.utc)

    def test_local_dates(self):
        s = hourly(np.zeros(48), start=datetime(2018, 12, 31, 23, tzinfo=timezone.utc))
        assert local_dates(s, "Europe/Copenhagen") == [date(2019, 1, 1), date(2019, 1, 2)]


class TestFiles:
    def test_meter_ingestion(self, tmp_path, caplog):
        f = tmp_path / "m.csv"
        f.write_text("timestamp,meter_id,reading_kwh,extra\n"
                     "2019-01-01T00:00:00Z,a,10,x\n2019-01-01T01:00:00Z,a,12,x\n"
                     "2019-01-01T02:00:00Z,a,15,x\n2019-01-01T00:00:00Z,b,0,x\n"
                     "2019-01-01T01:00:00Z,b,4,x\n2019-01-01T02:00:00Z,b,3,x\n")
        demand, report = ingest_meter_files([f], jobs=2)
        np.testing.assert_array_equal(demand.demand.values, [3.0, 3.0])
        np.testing.assert_array_equal(demand.meter_count, [2, 1])
        d = report.as_dict()
        assert d["negative_diffs"] == {"b": [1]}
        assert d["ignored_columns"] == ["extra"]
        assert "ignoring extra columns" in caplog.text

    def test_files_split_by_time_merge(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("timestamp,meter_id,reading_kwh\n2019-01-01T00:00:00Z,m,1\n2019-01-01T01:00:00Z,m,2\n")
        b.write_text("timestamp,meter_id,reading_kwh\n2019-01-01T02:00:00Z,m,4\n")
        demand, _ = ingest_meter_files([b, a])
        np.testing.assert_array_equal(demand.demand.values, [1.0, 2.0])

    def test_demand_round_trip(self, tmp_path):
        s = hourly([10.0, 20.0, 0.0], mask=[False, False, True])
        d = DistrictDemand(s, [2, 4, 1])
        write_demand_csv(tmp_path / "d.csv", d)
        back = read_demand_csv(tmp_path / "d.csv")
        np.testing.assert_allclose(back.demand.values[:2], [10.0, 20.0])
        assert back.demand.mask.tolist() == [False, False, True]
        np.testing.assert_array_equal(back.meter_count, [2, 4, 1])

    def test_weather_reader(self, tmp_path):
        f = tmp_path / "w.csv"
        f.write_text("timestamp,t_amb\n2019-01-01T00:00:00Z,1.5\n2019-01-01T02:00:00Z,2.5\n")
        s = read_weather_csv(f)
        assert s.name == "t_amb" and s.unit is Unit.CELSIUS
        assert s.mask.tolist() == [False, True, False]

    def test_weather_reader_needs_known_column(self, tmp_path):
        f = tmp_path / "w.csv"
        f.write_text("timestamp,rain\n2019-01-01T00:00:00Z,1\n")
        with pytest.raises(DataError):
            read_weather_csv(f)

    def test_holiday_round_trip(self, tmp_path):
        cal = HolidayCalendar(((date(2019, 12, 25), "Juledag"), (date(2019, 1, 1), "Nytårsdag")))
        write_holidays(tmp_path / "h.csv", cal)
        assert read_holidays(tmp_path / "h.csv") == cal

    def test_duplicate_timestamp_rejected(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("timestamp,demand\n2019-01-01T00:00:00Z,1\n2019-01-01T00:00:00Z,2\n")
        with pytest.raises(DataError):
            read_demand_csv(f)

import io
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flightcast import pipeline as pl
from flightcast.errors import ContractError, DataError


def ts(text):
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def series(start, demands, swims=None):
    t = ts(start)
    out = []
    for i, d in enumerate(demands):
        swim = swims[i] if swims is not None else None
        out.append(pl.QuarterHourRecord.at(t, d, swim))
        t += pl.STEP
    return out


HEADER = ",".join(pl.CSV_HEADER)


class TestParse:
    def test_empty_body(self):
        assert pl.parse_records(HEADER + "\n") == []

    def test_field_mapping(self):
        rows = HEADER + "\n2019-01-01T00:15:00Z,0,2,2,1,7,\n"
        recs = pl.parse_records(rows)
        assert len(recs) == 1
        assert recs[0].dep_demand == 7
        assert recs[0].swim_observed_departures is None
        assert (recs[0].hour, recs[0].qtr, recs[0].day_of_week, recs[0].month) == (0, 2, 2, 1)

    def test_calendar_derived_when_absent(self):
        rows = HEADER + "\n2019-06-30T23:45:00Z,,,,,3,5\n"
        rec = pl.parse_records(rows)[0]
        assert (rec.hour, rec.qtr, rec.month) == (23, 4, 6)
        assert rec.swim_observed_departures == 5

    def test_calendar_validated_when_present(self):
        rows = HEADER + "\n2019-01-01T00:15:00Z,0,3,2,1,7,\n"
        with pytest.raises(DataError, match="line 2.*qtr"):
            pl.parse_records(rows)

    def test_duplicate_timestamp(self):
        rows = (HEADER + "\n2019-01-01T00:15:00Z,,,,,1,\n"
                "2019-01-01T00:15:00Z,,,,,2,\n")
        with pytest.raises(DataError, match="2019-01-01T00:15:00Z"):
            pl.parse_records(rows)

    def test_unsorted_silently_sorted(self):
        rows = (HEADER + "\n2019-01-01T00:30:00Z,,,,,2,\n"
                "2019-01-01T00:15:00Z,,,,,1,\n")
        recs = pl.parse_records(rows)
        assert [r.dep_demand for r in recs] == [1, 2]

    def test_malformed_row_reports_line(self):
        rows = HEADER + "\n2019-01-01T00:15:00Z,,,,,seven,\n"
        with pytest.raises(DataError, match="line 2"):
            pl.parse_records(rows)

    def test_bad_header(self):
        with pytest.raises(DataError, match="header"):
            pl.parse_records("a,b,c\n")

    def test_roundtrip(self):
        recs = series("2019-03-01T00:00:00Z", [1, 2, 3], [2, 2, 4])
        buf = io.StringIO()
        pl.write_records_csv(recs, buf)
        again = pl.parse_records(buf.getvalue())
        assert again == recs


class TestDeriveCalendar:
    def test_known_tuesday(self):
        # 2019-01-01 is a Tuesday (1=Monday convention)
        assert pl.derive_calendar(ts("2019-01-01T00:15:00Z")) == (0, 2, 2, 1)

    def test_mid_year(self):
        hour, qtr, dow, month = pl.derive_calendar(ts("2019-06-30T23:45:00Z"))
        assert (hour, qtr, month) == (23, 4, 6)

    def test_minute_zero_is_qtr_one(self):
        assert pl.derive_calendar(ts("2020-05-11T07:00:00Z"))[1] == 1

    def test_off_boundary_rejected(self):
        with pytest.raises(ContractError):
            pl.derive_calendar(ts("2019-01-01T00:15:00Z") + timedelta(minutes=1))

    def test_against_zeller_oracle(self):
        # independent civil-calendar check for the day-of-week convention
        def zeller_dow(y, m, d):
            if m < 3:
                m += 12
                y -= 1
            k, j = y % 100, y // 100
            h = (d + 13 * (m + 1) // 5 + k + k // 4 + j // 4 + 5 * j) % 7
            return ((h + 5) % 7) + 1  # map Zeller (0=Saturday) to 1=Monday..7=Sunday

        rng = np.random.default_rng(99)
        base = ts("2019-01-01T00:00:00Z")
        for _ in range(1000):
            t = base + pl.STEP * int(rng.integers(0, 2 * 365 * 96))
            _, _, dow, _ = pl.derive_calendar(t)
            assert dow == zeller_dow(t.year, t.month, t.day)


class TestClean:
    def test_contiguous_unchanged(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 3])
        assert pl.clean_series(recs) == recs

    def test_gap_filled_with_zero(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 3])
        gappy = [recs[0], recs[2]]
        out = pl.clean_series(gappy)
        assert len(out) == 3
        assert out[1].dep_demand == 0
        assert out[1].swim_observed_departures is None
        assert out[1].slice_start_utc == recs[1].slice_start_utc

    def test_negative_demand_rejected(self):
        rec = pl.QuarterHourRecord.at(ts("2019-01-01T00:00:00Z"), 0)
        rec.dep_demand = -1
        with pytest.raises(DataError, match="2019-01-01T00:00:00Z"):
            pl.clean_series([rec])


class TestScaler:
    def test_hand_stats(self):
        recs = series("2019-01-01T00:00:00Z", [2, 4])
        scaler = pl.fit_scaler(recs)
        assert scaler.mean["y"] == 3.0
        assert scaler.std["y"] == 1.0  # population
        assert pl.apply_scaler(scaler, 4.0) == 1.0

    def test_constant_feature_degenerate(self):
        recs = series("2019-01-01T00:00:00Z", [5, 5, 5])
        scaler = pl.fit_scaler(recs)
        assert scaler.degenerate["y"]
        assert pl.apply_scaler(scaler, 5.0) == 0.0

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        recs = series("2019-01-01T00:00:00Z", rng.integers(0, 30, size=20).tolist())
        scaler = pl.fit_scaler(recs)
        values = rng.uniform(0, 30, size=100)
        back = scaler.inverse("y", scaler.transform("y", values))
        np.testing.assert_allclose(back, values, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            pl.fit_scaler([])

    def test_dict_round_trip(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 9], [1, 3, 8])
        scaler = pl.fit_scaler(recs)
        again = pl.Scaler.from_dict(scaler.to_dict())
        assert again.mean == scaler.mean and again.std == scaler.std


def brute_force_windows(records, p, tau):
    """Enumeration oracle: every contiguous run of p past + tau future slices."""
    out = []
    for start in range(0, len(records) - p - tau + 1):
        past = records[start:start + p]
        future = records[start + p:start + p + tau]
        out.append((past[-1].slice_start_utc,
                    [r.dep_demand for r in past],
                    [r.dep_demand for r in future]))
    return out


class TestWindows:
    def test_hand_case(self):
        recs = series("2019-01-01T00:00:00Z", list(range(10)))
        windows = pl.make_windows(recs, 3, 2)
        assert len(windows) == 6
        np.testing.assert_array_equal(windows[0].past_y, [0, 1, 2])
        np.testing.assert_array_equal(windows[0].targets, [3, 4])
        assert windows[0].origin == recs[2].slice_start_utc

    def test_exactly_one_window(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 3, 4, 5])
        assert len(pl.make_windows(recs, 3, 2)) == 1

    def test_too_short(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 3, 4])
        with pytest.raises(ContractError, match="5"):
            pl.make_windows(recs, 3, 2)

    def test_future_f_matches_calendar(self):
        recs = series("2019-01-01T23:30:00Z", list(range(6)))
        w = pl.make_windows(recs, 2, 3)[0]
        # future slices begin the step after the origin
        expect = []
        t = w.origin + pl.STEP
        for _ in range(3):
            hour, qtr, dow, month = pl.derive_calendar(t)
            expect.append([hour, qtr - 1, dow - 1, month - 1])
            t += pl.STEP
        np.testing.assert_array_equal(w.future_f, expect)

    def test_gap_rejected(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 3, 4, 5])
        del recs[2]
        with pytest.raises(ContractError, match="gap-free"):
            pl.make_windows(recs, 2, 1)

    def test_swim_channel(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 3, 4], [9, 8, 7, 6])
        w = pl.make_windows(recs, 2, 1, with_swim=True)[0]
        np.testing.assert_array_equal(w.past_x, [[9], [8]])

    def test_swim_missing_rejected(self):
        recs = series("2019-01-01T00:00:00Z", [1, 2, 3, 4])
        with pytest.raises(ContractError):
            pl.make_windows(recs, 2, 1, with_swim=True)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 160), st.integers(0, 10**6))
    def test_matches_brute_force_enumeration(self, p, tau, extra, seed):
        length = p + tau + extra  # always >= p + tau, <= 200
        rng = np.random.default_rng(seed)
        recs = series("2019-01-01T00:00:00Z", rng.integers(0, 20, size=length).tolist())
        windows = pl.make_windows(recs, p, tau)
        oracle = brute_force_windows(recs, p, tau)
        assert len(windows) == len(oracle) == length - p - tau + 1
        for w, (origin, past, fut) in zip(windows, oracle):
            assert w.origin == origin
            np.testing.assert_array_equal(w.past_y, past)
            np.testing.assert_array_equal(w.targets, fut)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 60), st.integers(0, 10**6))
    def test_windows_are_contiguous_slices(self, p, tau, extra, seed):
        length = p + tau + extra
        rng = np.random.default_rng(seed)
        demands = rng.integers(0, 50, size=length)
        recs = series("2019-01-01T00:00:00Z", demands.tolist())
        for i, w in enumerate(pl.make_windows(recs, p, tau)):
            np.testing.assert_array_equal(np.concatenate([w.past_y, w.targets]),
                                          demands[i:i + p + tau])


class TestSplit:
    def make_records(self):
        # 2019-12-30 .. 2020-01-02, 96 slices per day
        return series("2019-12-30T00:00:00Z", list(range(4 * 96)))

    def test_partition_by_date(self):
        spec = pl.SplitSpec("2019-12-30", "2019-12-31", "2020-01-01", "2020-01-02")
        train, test = pl.split_train_test(self.make_records(), spec)
        assert len(train) == len(test) == 192
        assert train[-1].slice_start_utc == ts("2019-12-31T23:45:00Z")
        assert test[0].slice_start_utc == ts("2020-01-01T00:00:00Z")

    def test_all_train_empty_test(self):
        spec = pl.SplitSpec("2019-12-30", "2020-01-02", "2020-01-03", "2020-01-03")
        with pytest.warns(UserWarning):
            _, test = pl.split_train_test(self.make_records(), spec)
        assert test == []

    def test_overlap_rejected(self):
        with pytest.raises(ContractError):
            pl.SplitSpec("2019-01-01", "2019-12-31", "2019-12-31", "2020-01-31")

    def test_test_origins_consume_trailing_train_history(self):
        spec = pl.SplitSpec("2019-12-30", "2019-12-31", "2020-01-01", "2020-01-02")
        recs = self.make_records()
        windows = pl.windows_for_test_range(recs, spec, n_lag=8, n_look_ahead=4)
        assert windows[0].origin == ts("2020-01-01T00:00:00Z")
        # its past reaches back into 2019-12-31
        np.testing.assert_array_equal(windows[0].past_y, np.arange(96 * 2 - 7, 96 * 2 + 1))
        # origins stop where targets would run past the data
        assert windows[-1].origin == ts("2020-01-02T22:45:00Z")

    def test_scaler_sees_train_only(self):
        spec = pl.SplitSpec("2019-12-30", "2019-12-31", "2020-01-01", "2020-01-02")
        train, _ = pl.split_train_test(self.make_records(), spec)
        scaler = pl.fit_scaler(train)
        assert scaler.mean["y"] == pytest.approx(np.mean(np.arange(192)))

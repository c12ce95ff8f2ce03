import numpy as np
import pandas as pd
import pytest

from solar_harvest.exceptions import (
	IngestError,
	InsufficientDataError,
	MalformedRowError,
	NonMonotoneTimestampError,
	WindowConfigError,
)
from solar_harvest.solar_harvest.data_ingest import (
	build_series,
	load_irradiance,
	resample,
	resample_frame,
	save_irradiance,
	synthesize_series,
)


def test_load_csv(write_records):
	path = write_records(
		[
			("2011-06-01T07:00:00+00:00", "1200.5"),
			("2011-06-01T07:01:00+00:00", "1300"),
			("2011-06-01T07:02:00+00:00", "1250.25"),
		]
	)
	series, report = load_irradiance(path)

	assert len(series) == 3
	assert series.values.tolist() == [1200.5, 1300.0, 1250.25]
	assert series.native_period == 60
	assert str(series.timestamps.tz) == "UTC"
	assert report.rows_read == 3
	assert report.rows_rejected == 0


def test_save_and_reload_is_exact(tmp_path, daylight_minutes):
	timestamps, values = daylight_minutes
	series = build_series(timestamps, values / 3.0)
	path = tmp_path / "out.csv"
	save_irradiance(series, str(path))

	again, _ = load_irradiance(str(path))
	assert np.array_equal(again.values, series.values)
	assert again.timestamps.equals(series.timestamps)


def test_malformed_row_reports_index(write_records):
	path = write_records(
		[
			("2011-06-01T07:00:00+00:00", "10"),
			("2011-06-01T07:01:00+00:00", "abc"),
			("2011-06-01T07:02:00+00:00", "12"),
		]
	)
	with pytest.raises(MalformedRowError) as e:
		load_irradiance(path)
	assert e.value.row == 1


def test_bad_timestamp_is_malformed(write_records):
	path = write_records([("2011-06-01T07:00:00+00:00", "10"), ("yesterday", "11")])
	with pytest.raises(MalformedRowError) as e:
		load_irradiance(path)
	assert e.value.row == 1


def test_non_monotone_timestamps(write_records):
	path = write_records(
		[
			("2011-06-01T07:00:00+00:00", "10"),
			("2011-06-01T07:02:00+00:00", "11"),
			("2011-06-01T07:01:00+00:00", "12"),
		]
	)
	with pytest.raises(NonMonotoneTimestampError):
		load_irradiance(path)


def test_header_mismatch(write_records):
	path = write_records([("2011-06-01T07:00:00+00:00", "10")], header="time,value")
	with pytest.raises(IngestError):
		load_irradiance(path)


def test_unknown_format(write_records):
	path = write_records([("2011-06-01T07:00:00+00:00", "10")])
	with pytest.raises(IngestError):
		load_irradiance(path, fmt="xml")


def test_legacy_layout(write_records):
	path = write_records(
		[("2011-06-01T07:00:00+00:00", "10"), ("2011-06-01T07:05:00+00:00", "20")],
		name="legacy.txt",
		header=None,
	)
	series, report = load_irradiance(path, fmt="legacy")
	assert series.values.tolist() == [10.0, 20.0]
	assert report.fmt == "legacy"


def test_negative_values_clamped_or_rejected(write_records):
	rows = [
		("2011-06-01T07:00:00+00:00", "10"),
		("2011-06-01T07:01:00+00:00", "-5"),
		("2011-06-01T07:02:00+00:00", "12"),
	]
	series, report = load_irradiance(write_records(rows))
	assert series.values.tolist() == [10.0, 0.0, 12.0]
	assert report.clamped == 1

	series, report = load_irradiance(write_records(rows, name="b.csv"), clamp_negative=False)
	assert series.values.tolist() == [10.0, 12.0]
	assert report.rows_rejected == 1


def test_gaps_counted():
	timestamps = pd.to_datetime(
		["2011-06-01 07:00", "2011-06-01 07:01", "2011-06-01 07:02", "2011-06-01 07:07", "2011-06-01 07:08"]
	)
	series = build_series(timestamps, np.ones(5))
	assert series.report.gaps == 1


def test_resample_preserves_means(window, daylight_minutes):
	timestamps, values = daylight_minutes
	frame = resample_frame(build_series(timestamps, values), window)

	assert len(frame) == 120
	assert (frame["count"] == 5).all()
	assert frame["mean"].to_numpy() == pytest.approx(values.reshape(120, 5).mean(axis=1), rel=1e-12)
	assert (frame["count"] * frame["mean"]).sum() == pytest.approx(values.sum(), rel=1e-12)


def test_resample_drops_samples_outside_window(window):
	timestamps = pd.date_range("2011-06-01 05:00", "2011-06-01 19:00", freq="300s", tz="UTC", inclusive="left")
	series = build_series(timestamps, np.arange(len(timestamps), dtype=float))
	sequences = resample(series, window)

	assert len(sequences) == 1
	assert len(sequences[0]) == window.periods_per_day


def test_missing_period_splits_sequence(window, daylight_minutes):
	timestamps, values = daylight_minutes
	keep = np.ones(len(values), dtype=bool)
	keep[50:55] = False
	sequences = resample(build_series(timestamps[keep], values[keep]), window)

	assert [len(s) for s in sequences] == [10, 109]


def test_resample_needs_one_full_day(window):
	morning = pd.date_range("2011-06-01 07:00", "2011-06-01 12:00", freq="300s", tz="UTC", inclusive="left")
	with pytest.raises(InsufficientDataError):
		resample(build_series(morning, np.ones(len(morning))), window)


def test_native_period_longer_than_management_period(window):
	timestamps = pd.date_range("2011-06-01 07:00", periods=20, freq="600s", tz="UTC")
	with pytest.raises(WindowConfigError):
		resample_frame(build_series(timestamps, np.ones(20)), window)


def test_utc_offset_shifts_window(window):
	window.utc_offset_hours = 2
	timestamps = pd.date_range("2011-06-01 05:00", periods=120, freq="300s", tz="UTC")
	sequences = resample(build_series(timestamps, np.ones(120)), window)
	assert [len(s) for s in sequences] == [120]


def test_synthesized_series_resamples_to_full_days(window, reference_hmm):
	series = synthesize_series(reference_hmm, window, n_days=3, seed=1)

	assert len(series) == 3 * window.periods_per_day
	assert series.values.min() >= 0
	sequences = resample(series, window)
	assert [len(s) for s in sequences] == [window.periods_per_day] * 3

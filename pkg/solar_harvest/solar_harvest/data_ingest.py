"""
Irradiance records: load, validate, resample to management periods.

Usage:
	series, report = load_irradiance("june.csv")
	days = resample(series, window)   # list of per-period mean sequences (uW/cm2)

Only the active (daylight) window is kept; a period with no samples splits the
day's sequence in two.
"""

from dataclasses import asdict, dataclass, field
from pkgutil import resolve_name

import numpy as np
import pandas as pd

import solar_harvest
from solar_harvest import hooks, throw
from solar_harvest.exceptions import (
	IngestError,
	InsufficientDataError,
	MalformedRowError,
	NonMonotoneTimestampError,
	WindowConfigError,
)
from solar_harvest.records import ConfigRecord

logger = solar_harvest.logger("data_ingest")

HEADER = ["timestamp", "irradiance_uw_cm2"]
GAP_FACTOR = 1.5


@dataclass
class WindowConfig(ConfigRecord):
	section = "window"

	active_start: float = 7.0
	active_end: float = 17.0
	period_s: int = 300
	utc_offset_hours: float = 0.0
	# replace negative readings by 0 instead of rejecting the row
	clamp_negative: bool = True

	def validate(self):
		if not 0 <= self.active_start < self.active_end <= 24:
			throw(
				f"Active window must satisfy 0 <= start < end <= 24, got {self.active_start}-{self.active_end}",
				WindowConfigError,
				field_path=self.field_path("active_start"),
			)
		if self.period_s <= 0:
			throw("Management period must be positive", WindowConfigError, field_path=self.field_path("period_s"))
		if self.window_seconds % self.period_s:
			throw(
				f"Active window of {self.window_seconds} s is not a whole number of {self.period_s} s periods",
				WindowConfigError,
				field_path=self.field_path("period_s"),
			)

	@property
	def window_seconds(self) -> int:
		return round((self.active_end - self.active_start) * 3600)

	@property
	def periods_per_day(self) -> int:
		return self.window_seconds // self.period_s


@dataclass
class LoadReport:
	path: str = ""
	fmt: str = "csv"
	rows_read: int = 0
	rows_rejected: int = 0
	clamped: int = 0
	gaps: int = 0

	def as_dict(self) -> dict:
		return asdict(self)


@dataclass
class IrradianceSeries:
	timestamps: pd.DatetimeIndex
	values: np.ndarray
	native_period: float
	report: LoadReport = field(default_factory=LoadReport)

	def __len__(self):
		return len(self.values)

	@property
	def samples(self) -> list[tuple]:
		return list(zip(self.timestamps.to_pydatetime(), self.values.tolist(), strict=True))

	def to_frame(self) -> pd.DataFrame:
		return pd.DataFrame({"timestamp": self.timestamps, "irradiance_uw_cm2": self.values})


def read_csv_records(path: str) -> pd.DataFrame:
	frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
	columns = [c.strip() for c in frame.columns]
	if columns != HEADER:
		throw(f"Expected header {','.join(HEADER)}, got {','.join(columns)}", IngestError, path=path)
	frame.columns = ["timestamp", "irradiance"]
	return frame


def read_legacy_records(path: str) -> pd.DataFrame:
	frame = pd.read_csv(path, dtype=str, keep_default_na=False, header=None, skipinitialspace=True)
	if frame.shape[1] != 2:
		throw(f"Legacy layout has two columns, found {frame.shape[1]}", IngestError, path=path)
	frame.columns = ["timestamp", "irradiance"]
	return frame


def _parse_float(text: str) -> float:
	try:
		return float(text)
	except (TypeError, ValueError):
		return np.nan


def _native_period(timestamps: pd.DatetimeIndex) -> float:
	if len(timestamps) < 2:
		return 0.0
	steps = np.diff(timestamps.asi8) / 1e9
	return float(np.median(steps))


def build_series(timestamps, values, report: LoadReport | None = None, clamp_negative: bool = True) -> IrradianceSeries:
	"""Validate parsed timestamps and values into a series (negative values clamped or dropped)."""
	report = report or LoadReport(rows_read=len(values))
	timestamps = pd.DatetimeIndex(timestamps)
	if timestamps.tz is None:
		timestamps = timestamps.tz_localize("UTC")
	else:
		timestamps = timestamps.tz_convert("UTC")
	values = np.asarray(values, dtype=float)

	negative = values < 0
	if negative.any():
		if clamp_negative:
			report.clamped += int(negative.sum())
			values = np.where(negative, 0.0, values)
		else:
			report.rows_rejected += int(negative.sum())
			timestamps, values = timestamps[~negative], values[~negative]

	steps = np.diff(timestamps.asi8)
	if np.any(steps <= 0):
		row = int(np.flatnonzero(steps <= 0)[0]) + 1
		throw(f"Timestamps must be strictly increasing (row {row})", NonMonotoneTimestampError, row=row)

	native = _native_period(timestamps)
	if native > 0:
		report.gaps = int(np.sum(steps / 1e9 > GAP_FACTOR * native))
	return IrradianceSeries(timestamps=timestamps, values=values, native_period=native, report=report)


def load_irradiance(path: str, fmt: str = "csv", clamp_negative: bool = True) -> tuple[IrradianceSeries, LoadReport]:
	"""Load a record file. `fmt` picks a loader registered under `irradiance_loaders` in hooks.py."""
	loaders = hooks.irradiance_loaders
	if fmt not in loaders:
		throw(f"Unknown irradiance format {fmt}, expected one of {sorted(loaders)}", IngestError)

	try:
		raw = resolve_name(loaders[fmt])(path)
	except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
		throw(f"Cannot read irradiance file {path}: {e}", IngestError, path=path)

	report = LoadReport(path=str(path), fmt=fmt, rows_read=len(raw))
	timestamps = pd.to_datetime(raw["timestamp"].str.strip(), utc=True, errors="coerce", format="ISO8601")
	values = raw["irradiance"].map(_parse_float).to_numpy(dtype=float)

	bad = timestamps.isna().to_numpy() | ~np.isfinite(values)
	if bad.any():
		row = int(np.flatnonzero(bad)[0])
		throw(f"Malformed row {row}: {raw.iloc[row].tolist()}", MalformedRowError, row=row, path=path)

	series = build_series(pd.DatetimeIndex(timestamps), values, report, clamp_negative)
	logger.info(
		f"Loaded {len(series)} samples from {path} "
		f"(rejected {report.rows_rejected}, clamped {report.clamped}, gaps {report.gaps})"
	)
	return series, report


def save_irradiance(series: IrradianceSeries, path: str):
	frame = pd.DataFrame(
		{
			"timestamp": series.timestamps.strftime("%Y-%m-%dT%H:%M:%S+00:00"),
			"irradiance_uw_cm2": series.values,
		}
	)
	frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _local_clock(series: IrradianceSeries, window):
	local = series.timestamps.tz_convert(None) + pd.Timedelta(hours=window.utc_offset_hours or 0.0)
	day = local.normalize()
	seconds = (local - day).total_seconds().to_numpy()
	return day, seconds


def resample_frame(series: IrradianceSeries, window) -> pd.DataFrame:
	"""Per (day, period) mean and sample count inside the active window."""
	if series.native_period > window.period_s:
		throw(
			f"Management period {window.period_s} s is shorter than the native sampling period {series.native_period} s",
			WindowConfigError,
			field_path="window.period_s",
		)

	day, seconds = _local_clock(series, window)
	start_s, end_s = window.active_start * 3600, window.active_end * 3600
	inside = (seconds >= start_s) & (seconds < end_s)
	if not inside.any():
		throw("No samples fall inside the active window", InsufficientDataError)

	frame = pd.DataFrame(
		{
			"day": day[inside],
			"period": ((seconds[inside] - start_s) // window.period_s).astype(int),
			"irradiance": series.values[inside],
		}
	)
	return (
		frame.groupby(["day", "period"], sort=True)["irradiance"]
		.agg(mean="mean", count="count", total="sum")
		.reset_index()
	)


def resample(series: IrradianceSeries, window) -> list[np.ndarray]:
	"""Daily sequences of per-period means, split wherever a period has no samples."""
	frame = resample_frame(series, window)
	n_periods = window.periods_per_day

	sequences, covered_days = [], 0
	for _, day in frame.groupby("day", sort=True):
		periods = day["period"].to_numpy()
		means = day["mean"].to_numpy()
		if periods[0] == 0 and periods[-1] == n_periods - 1:
			covered_days += 1
		breaks = np.flatnonzero(np.diff(periods) > 1) + 1
		for chunk, idx in zip(np.split(means, breaks), np.split(periods, breaks), strict=True):
			if len(chunk):
				sequences.append(chunk)
				logger.debug(f"Sequence of {len(chunk)} periods starting at period {idx[0]}")

	if not covered_days:
		throw(f"No day spans the full active window of {n_periods} periods", InsufficientDataError)
	logger.info(f"Resampled into {len(sequences)} sequences ({covered_days} days spanning {n_periods} periods)")
	return sequences


def synthesize_series(hmm, window, n_days: int, native_period_s: int | None = None, seed=None, start: str = "2011-01-01"):
	"""
	Irradiance drawn from the solar model inside the active window of each day.

	Each day is an independent chain started from the model's initial law; negative draws are clamped to 0.
	"""
	from solar_harvest.solar_harvest.solar_hmm import sample_observations

	native = native_period_s or window.period_s
	if window.window_seconds % native:
		throw(f"Native period {native} s does not divide the active window", WindowConfigError)
	per_day = window.window_seconds // native

	_, obs = sample_observations(hmm, per_day, seed, n_sequences=n_days)
	values = np.maximum(obs, 0.0).ravel()

	first = pd.Timestamp(start) + pd.Timedelta(hours=window.active_start - (window.utc_offset_hours or 0.0))
	offsets = (np.arange(n_days)[:, None] * 86400 + np.arange(per_day)[None, :] * native).ravel()
	timestamps = pd.DatetimeIndex(first + pd.to_timedelta(offsets, unit="s")).tz_localize("UTC")

	report = LoadReport(path="<synthetic>", fmt="synthetic", rows_read=len(values), clamped=int((obs < 0).sum()))
	return build_series(timestamps, values, report)

import numpy as np
import pandas as pd
import pytest

from solar_harvest.config import load_run_config
from solar_harvest.solar_harvest.data_ingest import WindowConfig
from solar_harvest.solar_harvest.pipeline import build_scenario
from solar_harvest.solar_harvest.solar_hmm import REFERENCE_5MIN


@pytest.fixture(scope="session")
def reference_hmm():
	return REFERENCE_5MIN


@pytest.fixture(scope="session")
def demo_config():
	return load_run_config("onoff-demo")


@pytest.fixture(scope="session")
def demo_scenario(demo_config):
	return build_scenario(demo_config)


@pytest.fixture
def window():
	return WindowConfig(active_start=7, active_end=17, period_s=300)


@pytest.fixture
def write_records(tmp_path):
	"""Write (timestamp, value) text rows under the standard header and return the path."""

	def _write(rows, name="records.csv", header="timestamp,irradiance_uw_cm2"):
		path = tmp_path / name
		lines = [header] if header else []
		lines += [f"{ts},{value}" for ts, value in rows]
		path.write_text("\n".join(lines) + "\n", encoding="utf-8")
		return str(path)

	return _write


@pytest.fixture
def daylight_minutes():
	"""One day of 1-minute samples covering 07:00-17:00 UTC."""
	timestamps = pd.date_range("2011-06-01 07:00", periods=600, freq="60s", tz="UTC")
	values = 1e4 + 5e4 * np.sin(np.linspace(0, np.pi, len(timestamps)))
	return timestamps, values

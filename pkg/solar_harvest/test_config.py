import json

import pytest

from solar_harvest.config import (
	apply_overrides,
	build_run_config,
	load_run_config,
	parse_override,
	parse_sweep,
)
from solar_harvest.exceptions import ValidationError

EIGHT_PSK = {"modulation_name": "8PSK", "bits_per_symbol": 3, "alpha": 0.6666666666666666, "beta": 0.29289321881345254}


def field_of(fn, *args):
	with pytest.raises(ValidationError) as e:
		fn(*args)
	return e.value.field_path


def test_defaults():
	config = load_run_config()
	assert config.model == "reference-5min"
	assert config.solver.policy_class == "onoff"
	assert config.solver.n_battery == 12
	assert config.solver.discount == 0.99
	assert [m.modulation_name for m in config.radio.modulations] == ["QPSK", "8PSK", "16QAM"]


def test_demo_manifest(demo_config):
	assert demo_config.solver.discount == 0.5
	assert demo_config.solver.n_battery == 8
	assert demo_config.radio.packet_duration == pytest.approx(0.01)
	assert demo_config.radio.packets_per_period == 30000
	assert demo_config.energy.e_unit == pytest.approx(5.4e6)
	assert demo_config.energy.energy_scale == pytest.approx(30.0)
	assert demo_config.radio.modulation_index("8psk") == 1


def test_shared_fields_reach_every_section():
	config = load_run_config("onoff-demo", ["p_unit=40000", "period_s=600"])
	assert config.energy.p_unit == config.radio.p_unit == 40000
	assert config.window.period_s == config.energy.period_s == config.radio.period_s == 600


def test_shared_field_mismatch():
	document = {"energy": {"period_s": 600}}
	assert field_of(build_run_config, document) == "energy.period_s"


def test_bad_values_name_the_field():
	assert field_of(load_run_config, "onoff-demo", ["radio.snr_db=abc"]) == "radio.snr_db"
	assert field_of(load_run_config, None, ["solver.bogus=1"]) == "solver.bogus"
	assert field_of(load_run_config, None, ["solver.discount=1.0"]) == "solver.discount"
	assert field_of(load_run_config, None, ["simulation.policy=greedy"]) == "simulation.policy"
	assert field_of(load_run_config, None, ["nosuch.field=1"]) == "nosuch"


def test_override_values_take_the_field_type():
	config = load_run_config("onoff-demo", ["solver.n_battery=6.0", "window.clamp_negative=no"])
	assert config.solver.n_battery == 6
	assert isinstance(config.solver.n_battery, int)
	assert config.window.clamp_negative is False
	assert field_of(load_run_config, "onoff-demo", ["solver.n_battery=6.5"]) == "solver.n_battery"


def test_child_row_errors_carry_the_index():
	rows = [{"modulation_name": "QPSK", "bits_per_symbol": 2, "alpha": 1.0, "beta": 2.0}, {**EIGHT_PSK, "beta": -1}]
	assert field_of(build_run_config, {"radio": {"modulations": rows}}) == "radio.modulations[1].beta"


def test_document_level_errors():
	assert field_of(build_run_config, {"colour": "blue"}) == "colour"
	assert field_of(build_run_config, {"version": 2}) == "version"
	assert field_of(load_run_config, "missing.json") == "config"
	assert field_of(load_run_config, "sunrise") == "config"


def test_config_from_file(tmp_path):
	path = tmp_path / "run.json"
	path.write_text(json.dumps({"version": 1, "radio": {"snr_db": 12}, "solver": {"n_battery": 4}}), encoding="utf-8")
	config = load_run_config(str(path))
	assert config.radio.snr_db == 12
	assert config.solver.n_battery == 4
	assert config.source == str(path)


def test_replace_leaves_original_untouched(demo_config):
	louder = demo_config.replace({"radio.snr_db": 12})
	assert louder.radio.snr_db == 12
	assert demo_config.radio.snr_db == 6
	assert louder.config_hash() != demo_config.config_hash()
	assert demo_config.replace({}).config_hash() == demo_config.config_hash()


def test_overrides_parse_json_literals():
	assert parse_override("radio.snr_db=7.5") == ("radio.snr_db", 7.5)
	assert parse_override("channel.thresholds=[0.5, 1.0]") == ("channel.thresholds", [0.5, 1.0])
	assert parse_override("solver.modulation=QPSK") == ("solver.modulation", "QPSK")
	with pytest.raises(ValidationError):
		parse_override("radio.snr_db")

	document = apply_overrides({"radio": {"snr_db": 1}}, ["radio.snr_db=3", "model=reference-15min"])
	assert document == {"radio": {"snr_db": 3}, "model": "reference-15min"}


def test_parse_sweep():
	key, values = parse_sweep("snr=-5:20:1")
	assert key == "radio.snr_db"
	assert values == list(range(-5, 21))

	assert parse_sweep("battery=2,4,8") == ("solver.n_battery", [2, 4, 8])
	assert parse_sweep("channel.fd_norm=0.01:0.03:0.01")[1] == pytest.approx([0.01, 0.02, 0.03])

	for bad in ("snr", "colour=1:2:1", "snr=1:2:0", "snr=a:b:c"):
		with pytest.raises(ValidationError):
			parse_sweep(bad)

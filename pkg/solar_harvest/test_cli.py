import json
from pkgutil import resolve_name

import pandas as pd
import pytest

from solar_harvest.cli import get_parser, main


def read_json(path):
	with open(path, encoding="utf-8") as f:
		return json.load(f)


def test_parser_defaults():
	args = get_parser().parse_args(["simulate", "--config", "onoff-demo"])
	assert args.format == "json"
	assert args.policies == "onoff"
	assert args.metrics == "rate"
	assert args.workers == 1


def test_solve_writes_document(tmp_path, capsys):
	assert main(["solve", "--config", "onoff-demo", "--out", str(tmp_path)]) == 0

	document = read_json(tmp_path / "solve.json")
	assert document["status"] == "success"
	assert document["converged"]
	assert len(document["table"]) == 4 * 6 * 8
	assert document["thresholds"]["is_threshold"] == [[True] * 6] * 4
	assert "generated_at" in document["metadata"]

	summary = json.loads(capsys.readouterr().out)
	assert summary["command"] == "solve"
	assert "table" not in summary


def test_solve_is_repeatable(tmp_path):
	first, second = tmp_path / "a", tmp_path / "b"
	assert main(["solve", "--config", "onoff-demo", "--out", str(first)]) == 0
	assert main(["solve", "--config", "onoff-demo", "--out", str(second)]) == 0

	a, b = read_json(first / "solve.json"), read_json(second / "solve.json")
	a.pop("metadata")
	b.pop("metadata")
	assert a == b


def test_simulate_sweep_csv(tmp_path):
	argv = [
		"simulate",
		"--config",
		"onoff-demo",
		"--out",
		str(tmp_path),
		"--format",
		"csv",
		"--sweep",
		"snr=4,8",
		"--policies",
		"onoff,myopic1,myopic2",
		"--periods",
		"500",
	]
	assert main(argv) == 0

	table = pd.read_csv(tmp_path / "simulate.csv")
	assert len(table) == 6
	assert set(table["policy"]) == {"onoff", "myopic1", "myopic2"}
	assert table["radio.snr_db"].tolist() == [4, 4, 4, 8, 8, 8]
	assert (table["metric"] == "rate").all()

	meta = read_json(tmp_path / "simulate.meta.json")
	assert meta["rows"] == 6
	assert meta["sweep_key"] == "radio.snr_db"


def test_analyze_csv(tmp_path):
	assert main(["analyze", "--config", "onoff-demo", "--out", str(tmp_path), "--format", "csv"]) == 0
	table = pd.read_csv(tmp_path / "analyze.csv")
	assert list(table.columns) == ["z", "x", "kappa"]
	assert len(table) == 24
	assert (table[table["x"] >= 2]["kappa"] == 0).all()


def test_errors_return_status_document(tmp_path, capsys):
	assert main(["solve", "--config", "onoff-demo", "--discount", "1.5", "--out", str(tmp_path)]) == 1
	error = json.loads(capsys.readouterr().out)
	assert error["status"] == "error"
	assert error["field"] == "solver.discount"


def test_synthesize_then_train(tmp_path):
	out = str(tmp_path)
	assert main(["data", "synth", "--config", "onoff-demo", "--days", "3", "--out", out]) == 0
	synth = read_json(tmp_path / "data_synth.json")
	assert synth["samples"] == 3 * 120

	assert main(["train", "--data", synth["path"], "--states", "2", "--out", out]) == 0
	model = read_json(tmp_path / "model.json")
	assert model["n_states"] == 2
	assert model["means"][0] < model["means"][1]

	trained = read_json(tmp_path / "train.json")
	assert trained["report"]["n_sequences"] == 3


def test_entry_point_loads(capsys):
	entry = resolve_name("solar_harvest.cli:main")
	with pytest.raises(SystemExit) as exc:
		entry(["--help"])
	assert exc.value.code == 0
	assert "simulate" in capsys.readouterr().out

	from solar_harvest.solar_harvest.solar_hmm import REFERENCE_MODELS

	assert sorted(REFERENCE_MODELS) == ["reference-15min", "reference-5min"]
	assert REFERENCE_MODELS["reference-5min"].stationary.sum() == pytest.approx(1.0)


def test_site_config_sets_output_dir(tmp_path, monkeypatch):
	site = tmp_path / "site.json"
	site.write_text(json.dumps({"output_dir": str(tmp_path / "runs"), "log_level": "info"}))
	monkeypatch.setenv("SOLAR_HARVEST_SITE_CONFIG", str(site))

	assert main(["solve", "--config", "onoff-demo"]) == 0
	assert (tmp_path / "runs" / "solve.json").exists()


def test_unreadable_site_config(tmp_path, capsys):
	assert main(["solve", "--config", "onoff-demo", "--site-config", str(tmp_path / "missing.json")]) == 1
	assert json.loads(capsys.readouterr().out)["field"] == "site_config"

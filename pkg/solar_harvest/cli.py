"""
`harvest` command line.

	harvest data synth --days 30 --out runs/
	harvest data resample --data june.csv --format csv
	harvest train --data june.csv --states 4 --period 300
	harvest solve --config onoff-demo --policy-class onoff --modulation 8psk --discount 0.5
	harvest analyze --config onoff-demo
	harvest simulate --config comparison --sweep snr=-5:20:1 --policies onoff,myopic1,myopic2

Every command prints a status document and writes its output to `--out`
(a directory) as `<command>.<format>`. Timestamps live only in the `metadata`
block so reruns with the same inputs and seed differ nowhere else.
"""

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pkgutil import resolve_name

import numpy as np
import pandas as pd

import solar_harvest
from solar_harvest import hooks, throw
from solar_harvest.config import load_run_config, parse_sweep
from solar_harvest.exceptions import ValidationError

logger = solar_harvest.logger("cli")

SITE_CONFIG_ENV = "SOLAR_HARVEST_SITE_CONFIG"
SITE_DEFAULTS = {"log_level": "INFO", "default_seed": 0, "output_dir": "."}


def load_site_config(path: str | None = None) -> dict:
	"""Process-level settings from `path` or `$SOLAR_HARVEST_SITE_CONFIG`; the log level is applied here."""
	site = dict(SITE_DEFAULTS)
	path = path or os.environ.get(SITE_CONFIG_ENV)
	if path:
		try:
			with open(path, encoding="utf-8") as f:
				site.update(json.load(f))
		except (OSError, json.JSONDecodeError) as e:
			throw(f"Cannot read site config {path}: {e}", field_path="site_config")
	solar_harvest.logger().setLevel(str(site["log_level"]).upper())
	return site


def _json_default(value):
	if isinstance(value, np.integer):
		return int(value)
	if isinstance(value, np.floating):
		return float(value)
	if isinstance(value, np.bool_):
		return bool(value)
	if isinstance(value, np.ndarray):
		return value.tolist()
	if isinstance(value, pd.DataFrame):
		return value.to_dict(orient="records")
	raise TypeError(f"Cannot serialize {type(value).__name__}")


def write_json(document: dict, path: str):
	with open(path, "w", encoding="utf-8") as f:
		json.dump(document, f, indent=1, sort_keys=False, default=_json_default)
		f.write("\n")


def write_csv(document: dict, path: str):
	"""The `table` entry goes to `path`; everything else to a `.meta.json` sidecar."""
	table = document.get("table")
	if table is None:
		throw("This command has no tabular output, use --format json", field_path="format")
	table.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
	write_json({k: v for k, v in document.items() if k != "table"}, f"{os.path.splitext(path)[0]}.meta.json")


def _overrides(args) -> list[str]:
	overrides = list(args.set or [])
	seed = args.seed
	if seed is None and not args.config:
		seed = args.site.get("default_seed")
	if seed is not None:
		overrides += [f"simulation.seed={seed}", f"hmm.init_seed={seed}"]
	return overrides


def _config(args, extra=None):
	return load_run_config(args.config, _overrides(args) + list(extra or []))


def _success(command: str, config=None, **payload) -> dict:
	document = {"status": "success", "command": command, "version": solar_harvest.__version__}
	if config is not None:
		document["config"] = config.as_dict()
		document["config_hash"] = config.config_hash()
	document.update(payload)
	return document


def cmd_data(args) -> dict:
	from solar_harvest.solar_harvest.data_ingest import load_irradiance, resample_frame, save_irradiance, synthesize_series
	from solar_harvest.solar_harvest.solar_hmm import resolve_model

	config = _config(args)
	if args.action == "synth":
		hmm = resolve_model(args.model or config.model)
		series = synthesize_series(hmm, config.window, args.days, args.native_period, seed=config.simulation.seed)
		path = os.path.join(args.out, "irradiance.csv")
		save_irradiance(series, path)
		return _success("data synth", config, path=path, samples=len(series), report=series.report.as_dict())

	if not (args.data or config.data):
		throw("--data is required for resample", field_path="data")
	series, report = load_irradiance(args.data or config.data, args.data_format or config.data_format, config.window.clamp_negative)
	frame = resample_frame(series, config.window)
	frame["day"] = frame["day"].dt.strftime("%Y-%m-%d")
	return _success("data resample", config, report=report.as_dict(), periods=len(frame), table=frame)


def cmd_train(args) -> dict:
	from solar_harvest.solar_harvest.data_ingest import load_irradiance, resample
	from solar_harvest.solar_harvest.solar_hmm import em_train, save_model

	extra = []
	if args.states:
		extra.append(f"hmm.n_states={args.states}")
	if args.period:
		extra.append(f"period_s={args.period}")
	config = _config(args, extra)

	paths = args.data or ([config.data] if config.data else [])
	if not paths:
		throw("--data is required for train", field_path="data")

	sequences = []
	for path in paths:
		series, _ = load_irradiance(path, args.data_format or config.data_format, config.window.clamp_negative)
		sequences.extend(resample(series, config.window))

	training = config.hmm
	params, report = em_train(
		sequences,
		n_states=training.n_states,
		init=training.init,
		max_iters=training.max_iters,
		ll_tol=training.ll_tol,
		variance_floor_ratio=training.variance_floor_ratio,
		min_state_mass=training.min_state_mass,
		seed=training.init_seed,
		progress=args.progress,
	)
	params.metadata.update({"config_hash": config.config_hash(), "period_s": config.window.period_s, "sources": paths})
	model_path = os.path.join(args.out, "model.json")
	save_model(params, model_path)
	return _success("train", config, model_path=model_path, report=report.as_dict(), model=params.as_dict())


def _solve_overrides(args) -> list[str]:
	extra = []
	if getattr(args, "model", None):
		extra.append(f"model={args.model}")
	for flag, key in (("policy_class", "solver.policy_class"), ("modulation", "solver.modulation"), ("discount", "solver.discount"), ("battery", "solver.n_battery")):
		value = getattr(args, flag, None)
		if value is not None:
			extra.append(f"{key}={value}")
	return extra


def cmd_solve(args) -> dict:
	from solar_harvest.solar_harvest.pipeline import build_scenario
	from solar_harvest.solar_harvest.policy_analysis import check_threshold

	config = _config(args, _solve_overrides(args))
	scenario = build_scenario(config)
	value, policy = scenario.value, scenario.policy

	table = policy.to_frame().merge(value.to_frame(), on=["z", "x", "n"])
	payload = {"sweeps": value.sweeps, "converged": value.converged, "residual": value.residual, "table": table}
	if scenario.model.policy_class == "onoff":
		payload["thresholds"] = check_threshold(policy, value, scenario.model).as_dict()
	return _success("solve", config, **payload)


def cmd_analyze(args) -> dict:
	from solar_harvest.solar_harvest.pipeline import build_scenario
	from solar_harvest.solar_harvest.policy_analysis import analysis_report

	config = _config(args, _solve_overrides(args) + ["solver.policy_class=onoff"])
	scenario = build_scenario(config)
	report = analysis_report(scenario.policy, scenario.value, scenario.model, scenario.hmm.stationary, config.as_dict())
	thresholds = np.asarray(report["threshold"]["thresholds"])
	z, x = np.indices(thresholds.shape)
	table = pd.DataFrame({"z": z.ravel(), "x": x.ravel(), "kappa": thresholds.ravel()})
	report.pop("status", None)
	report.pop("config", None)
	return _success("analyze", config, table=table, **report)


def cmd_simulate(args) -> dict:
	from solar_harvest.solar_harvest.pipeline import sweep_setups
	from solar_harvest.solar_harvest.simulator import sweep

	extra = _solve_overrides(args)
	if args.periods:
		extra.append(f"simulation.n_periods={args.periods}")
	config = _config(args, extra)

	key, values = parse_sweep(args.sweep) if args.sweep else (None, None)
	policies = [p.strip() for p in args.policies.split(",") if p.strip()]
	setups = sweep_setups(config, key, values, policies)
	metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
	table = sweep(setups, metrics=metrics, workers=args.workers, progress=args.progress)
	return _success("simulate", config, sweep_key=key, sweep_values=values, policies=policies, rows=len(table), table=table)


def get_parser() -> argparse.ArgumentParser:
	common = argparse.ArgumentParser(add_help=False)
	common.add_argument("--config", help="run-config document path or manifest name (onoff-demo, comparison, large-panel)")
	common.add_argument("--out", default=None, help="output directory")
	common.add_argument("--seed", type=int, default=None)
	common.add_argument("--format", choices=sorted(hooks.output_formats), default="json")
	common.add_argument("--site-config", default=None)
	common.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE", help="override a config field")
	common.add_argument("--progress", action="store_true", help="show progress bars")

	parser = argparse.ArgumentParser(prog="harvest", description="Solar harvesting models and transmission policies")
	sub = parser.add_subparsers(dest="command", required=True)

	data = sub.add_parser("data", parents=[common], help="synthesize or resample irradiance records")
	data.add_argument("action", choices=["synth", "resample"])
	data.add_argument("--data")
	data.add_argument("--data-format", choices=sorted(hooks.irradiance_loaders))
	data.add_argument("--model")
	data.add_argument("--days", type=int, default=30)
	data.add_argument("--native-period", type=int, default=None)
	data.set_defaults(func=cmd_data)

	train = sub.add_parser("train", parents=[common], help="fit the solar model by EM")
	train.add_argument("--data", action="append")
	train.add_argument("--data-format", choices=sorted(hooks.irradiance_loaders))
	train.add_argument("--states", type=int)
	train.add_argument("--period", type=int)
	train.set_defaults(func=cmd_train)

	for name, func, text in (("solve", cmd_solve, "solve the MDP"), ("analyze", cmd_analyze, "threshold and rate analysis"), ("simulate", cmd_simulate, "Monte Carlo evaluation")):
		command = sub.add_parser(name, parents=[common], help=text)
		command.add_argument("--model", help="reference model name or model document path")
		command.add_argument("--policy-class", choices=["onoff", "composite"])
		command.add_argument("--modulation")
		command.add_argument("--discount", type=float)
		command.add_argument("--battery", type=int)
		command.set_defaults(func=func)
		if name == "simulate":
			command.add_argument("--sweep", help="key=start:stop:step or key=a,b,c")
			command.add_argument("--policies", default="onoff")
			command.add_argument("--periods", type=int)
			command.add_argument("--metrics", default="rate")
			command.add_argument("--workers", type=int, default=1)

	return parser


def run(argv=None) -> dict:
	args = get_parser().parse_args(argv)
	args.site = load_site_config(args.site_config)
	args.out = args.out or args.site.get("output_dir") or "."
	os.makedirs(args.out, exist_ok=True)

	document = args.func(args)
	document["metadata"] = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}

	name = args.command if args.command != "data" else f"data_{args.action}"
	path = os.path.join(args.out, f"{name}.{args.format}")
	writer = resolve_name(hooks.output_formats[args.format])
	if args.format == "csv" and document.get("table") is None:
		writer = write_json
		path = os.path.join(args.out, f"{name}.json")
	writer(document, path)
	document["output"] = path
	return document


def main(argv=None) -> int:
	try:
		document = run(argv)
	except ValidationError as e:
		logger.error(f"{type(e).__name__}: {e}")
		print(json.dumps(e.as_dict(), default=_json_default))
		return 1

	summary = {k: v for k, v in document.items() if k not in ("table", "config", "model")}
	print(json.dumps(summary, indent=1, default=_json_default))
	return 0


if __name__ == "__main__":
	sys.exit(main())

"""
Run configuration.

A run configuration is one JSON document:

	{
		"version": 1,
		"model": "reference-5min",
		"p_unit": 18000,
		"period_s": 300,
		"window": {...}, "energy": {...}, "channel": {...}, "radio": {...},
		"solver": {...}, "hmm": {...}, "simulation": {...}
	}

Every section is built into its config record (`WindowConfig`, `RadioConfig`, ...) and
missing fields take the record defaults. `p_unit` and `period_s` at the top level are
copied into every section that carries them. Overrides (`section.field=value`) are applied last.

Usage:
	config = load_run_config("onoff-demo")                          # shipped manifest
	config = load_run_config("run.json", ["radio.snr_db=10"])
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

import solar_harvest
from solar_harvest import hooks, throw
from solar_harvest.solar_harvest.channel_model import ChannelConfig
from solar_harvest.solar_harvest.data_ingest import WindowConfig
from solar_harvest.solar_harvest.energy_model import EnergyConfig
from solar_harvest.solar_harvest.mdp_core import RadioConfig, SolverConfig
from solar_harvest.solar_harvest.simulator import SimConfig
from solar_harvest.solar_harvest.solar_hmm import HmmTraining

logger = solar_harvest.logger("config")

CONFIG_VERSION = 1

SECTIONS = {
	"window": WindowConfig,
	"energy": EnergyConfig,
	"channel": ChannelConfig,
	"radio": RadioConfig,
	"solver": SolverConfig,
	"hmm": HmmTraining,
	"simulation": SimConfig,
}

SHARED_FIELDS = {
	"p_unit": ("energy", "radio"),
	"period_s": ("window", "energy", "radio"),
}

TOP_LEVEL = {"version", "model", "data", "data_format", *SHARED_FIELDS, *SECTIONS}

# --sweep keys
SWEEP_ALIASES = {
	"snr": "radio.snr_db",
	"battery": "solver.n_battery",
	"area": "energy.panel_area",
	"discount": "solver.discount",
	"doppler": "channel.fd_norm",
}

APP_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@dataclass
class RunConfig:
	window: WindowConfig
	energy: EnergyConfig
	channel: ChannelConfig
	radio: RadioConfig
	solver: SolverConfig
	hmm: HmmTraining
	simulation: SimConfig
	model: str = "reference-5min"
	data: str | None = None
	data_format: str = "csv"
	source: str | None = None
	document: dict = field(default_factory=dict)

	def section(self, name: str):
		return getattr(self, name)

	def as_dict(self) -> dict:
		out = {"version": CONFIG_VERSION, "model": self.model, "data": self.data, "data_format": self.data_format}
		for name in SECTIONS:
			out[name] = self.section(name).as_dict()
		return out

	def config_hash(self) -> str:
		payload = json.dumps(self.as_dict(), sort_keys=True, default=str)
		return hashlib.sha256(payload.encode()).hexdigest()[:12]

	def replace(self, overrides) -> "RunConfig":
		"""A new config with `section.field=value` overrides applied on top of this one."""
		return build_run_config(apply_overrides(self.as_dict(), overrides), source=self.source)


def manifest_path(name: str) -> str:
	manifests = hooks.manifests
	if name not in manifests:
		throw(f"Unknown manifest {name}, expected one of {sorted(manifests)}", field_path="config")
	return os.path.join(APP_ROOT, manifests[name])


def read_document(path: str) -> dict:
	"""Load a config document from a path or a shipped manifest name."""
	if not os.path.exists(path) and not path.endswith(".json"):
		path = manifest_path(path)
	try:
		with open(path, encoding="utf-8") as f:
			document = json.load(f)
	except (OSError, json.JSONDecodeError) as e:
		throw(f"Cannot read config document {path}: {e}", field_path="config")

	if not isinstance(document, dict):
		throw("Config document must be a JSON object", field_path="config")
	return document


def parse_value(text: str):
	"""JSON literal when it parses (numbers, lists, booleans), otherwise the raw string."""
	try:
		return json.loads(text)
	except json.JSONDecodeError:
		return text


def parse_override(text: str) -> tuple[str, object]:
	key, sep, value = text.partition("=")
	key = key.strip()
	if not sep or not key:
		throw(f"Override {text!r} must look like section.field=value", field_path="config")
	return key, parse_value(value.strip())


def apply_overrides(document: dict, overrides) -> dict:
	"""Return a copy of `document` with overrides applied; accepts a dict or `key=value` strings."""
	document = json.loads(json.dumps(document))
	if not overrides:
		return document

	items = overrides.items() if isinstance(overrides, dict) else (parse_override(o) for o in overrides)
	for key, value in items:
		section, _, fieldname = key.partition(".")
		if not fieldname:
			if section not in TOP_LEVEL or section in SECTIONS:
				throw(f"Unknown config key {section}", field_path=section)
			document[section] = value
			continue
		if section not in SECTIONS:
			throw(f"Unknown config section {section}", field_path=section)
		document.setdefault(section, {})[fieldname] = value
	return document


def _check_shared(config: RunConfig):
	for fieldname, sections in SHARED_FIELDS.items():
		values = {name: getattr(config.section(name), fieldname) for name in sections}
		first = values[sections[0]]
		odd = [name for name in sections if values[name] != first]
		if odd:
			detail = ", ".join(f"{name}={value}" for name, value in values.items())
			throw(f"{fieldname} differs between sections ({detail})", field_path=f"{odd[0]}.{fieldname}")


def build_run_config(document: dict, source: str | None = None) -> RunConfig:
	unknown = sorted(set(document) - TOP_LEVEL)
	if unknown:
		throw(f"Unknown config key {unknown[0]}", field_path=unknown[0])

	version = document.get("version", CONFIG_VERSION)
	if version != CONFIG_VERSION:
		throw(f"Unsupported config version {version}, expected {CONFIG_VERSION}", field_path="version")

	sections = {}
	for name, record in SECTIONS.items():
		values = dict(document.get(name) or {})
		for fieldname, targets in SHARED_FIELDS.items():
			if name in targets and document.get(fieldname) is not None:
				values[fieldname] = document[fieldname]
		sections[name] = record.from_dict(values)

	config = RunConfig(
		**sections,
		model=document.get("model") or "reference-5min",
		data=document.get("data"),
		data_format=document.get("data_format") or "csv",
		source=source,
		document=document,
	)
	_check_shared(config)
	return config


def load_run_config(path: str | None = None, overrides=None) -> RunConfig:
	"""Defaults, then the document at `path` (or manifest name), then overrides."""
	document = read_document(path) if path else {}
	config = build_run_config(apply_overrides(document, overrides), source=path)
	logger.debug(f"Run config {config.config_hash()} loaded from {path or 'defaults'}")
	return config


def parse_sweep(text: str) -> tuple[str, list]:
	"""
	`snr=-5:20:1` -> ("radio.snr_db", [-5, -4, ..., 20]); `battery=2,4,8` -> explicit values.

	Ranges include the stop value when the step lands on it.
	"""
	key, sep, spec = text.partition("=")
	if not sep:
		throw(f"Sweep {text!r} must look like key=start:stop:step or key=a,b,c", field_path="sweep")
	key = SWEEP_ALIASES.get(key.strip(), key.strip())
	if "." not in key or key.split(".")[0] not in SECTIONS:
		throw(f"Unknown sweep key {key}, use a section.field path or one of {sorted(SWEEP_ALIASES)}", field_path="sweep")

	if ":" in spec:
		try:
			parts = [float(p) for p in spec.split(":")]
		except ValueError:
			throw(f"Sweep range {spec!r} is not numeric", field_path="sweep")
		if len(parts) != 3 or parts[2] == 0:
			throw(f"Sweep range {spec!r} needs start:stop:step with a non-zero step", field_path="sweep")
		start, stop, step = parts
		count = int(np.floor((stop - start) / step + 1e-9)) + 1
		values = [start + i * step for i in range(max(count, 0))]
		if all(float(v).is_integer() for v in (start, step)):
			values = [int(round(v)) for v in values]
	else:
		values = [parse_value(v.strip()) for v in spec.split(",") if v.strip()]

	if not values:
		throw(f"Sweep {text!r} is empty", field_path="sweep")
	return key, values


# Copyright (c) 2024, TCL and contributors
# For license information, please see license.txt

"""
Typed config records.

Every run-config section is a dataclass declared next to the code that consumes it:
`WindowConfig` in data_ingest, `EnergyConfig` in energy_model, `ChannelConfig` in
channel_model, `Modulation`/`RadioConfig`/`SolverConfig` in mdp_core, `HmmTraining` in
solar_hmm and `SimConfig` in simulator.

`from_dict` turns a JSON section into the declared field types and rejects unknown keys;
`validate()` runs on construction. Errors name the field, e.g. `radio.modulations[1].beta`.
"""

import dataclasses
import math
import types
from dataclasses import dataclass
from typing import ClassVar, Literal, Union, get_args, get_origin, get_type_hints

from solar_harvest.exceptions import ValidationError


@dataclass
class ConfigRecord:
	section: ClassVar[str | None] = None

	def __post_init__(self):
		self.validate()

	def validate(self):
		pass

	@classmethod
	def field_path(cls, fieldname: str) -> str:
		return f"{cls.section}.{fieldname}" if cls.section else fieldname

	@classmethod
	def from_dict(cls, values: dict | None = None):
		values = dict(values or {})
		fields = dataclasses.fields(cls)
		unknown = sorted(set(values) - {f.name for f in fields})
		if unknown:
			raise ValidationError(f"Unknown field for {cls.__name__}: {unknown[0]}", field_path=cls.field_path(unknown[0]))

		hints = get_type_hints(cls)
		kwargs = {}
		for f in fields:
			if f.name in values:
				kwargs[f.name] = _convert(values[f.name], hints[f.name], cls.field_path(f.name))
			elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
				raise ValidationError(f"{f.name} is mandatory", field_path=cls.field_path(f.name))
		return cls(**kwargs)

	def as_dict(self) -> dict:
		out = {}
		for f in dataclasses.fields(self):
			value = getattr(self, f.name)
			if isinstance(value, list):
				value = [v.as_dict() if isinstance(v, ConfigRecord) else v for v in value]
			out[f.name] = value
		return out


def _row(record: type[ConfigRecord], value, path: str) -> ConfigRecord:
	if isinstance(value, record):
		return value
	if not isinstance(value, dict):
		raise ValidationError(f"Expected a {record.__name__} row, got {value!r}", field_path=path)
	try:
		return record.from_dict(value)
	except ValidationError as e:
		e.field_path = f"{path}.{e.field_path}" if e.field_path else path
		raise


def _convert(value, hint, path: str):
	origin, args = get_origin(hint), get_args(hint)
	if origin in (Union, types.UnionType):
		if value is None and type(None) in args:
			return None
		hint = next(a for a in args if a is not type(None))
		origin, args = get_origin(hint), get_args(hint)

	try:
		if origin is Literal:
			if value not in args:
				raise ValidationError(f"Expected one of {list(args)}, got {value!r}", field_path=path)
			return value

		if origin is list:
			if not isinstance(value, list):
				raise ValidationError(f"Expected a list, got {value!r}", field_path=path)
			(item,) = args
			if isinstance(item, type) and issubclass(item, ConfigRecord):
				return [_row(item, row, f"{path}[{idx}]") for idx, row in enumerate(value)]
			return [_convert(v, item, path) for v in value]

		if hint is bool:
			if isinstance(value, str):
				return value.strip().lower() in ("1", "true", "yes")
			return bool(value)

		if hint is int:
			number = float(value)
			if not number.is_integer():
				raise ValidationError(f"Expected an integer, got {value!r}", field_path=path)
			return int(number)

		if hint is float:
			number = float(value)
			if math.isnan(number):
				raise ValidationError("Expected a number, got NaN", field_path=path)
			return number

		if hint is str:
			return str(value)
	except (TypeError, ValueError):
		raise ValidationError(f"Invalid value {value!r}", field_path=path)

	return value

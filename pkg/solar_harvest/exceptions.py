# Copyright (c) 2024, TCL and contributors
# For license information, please see license.txt


class ValidationError(Exception):
	"""Base error. `field_path` names the offending config field when there is one."""

	def __init__(self, message: str = "", field_path: str | None = None, **context):
		super().__init__(message)
		self.message = message
		self.field_path = field_path
		self.context = context
		for key, value in context.items():
			setattr(self, key, value)

	def as_dict(self) -> dict:
		out = {"status": "error", "type": type(self).__name__, "message": self.message}
		if self.field_path:
			out["field"] = self.field_path
		return out


class IngestError(ValidationError):
	pass


class MalformedRowError(IngestError):
	"""Carries `row`, the zero-based data row index."""


class NonMonotoneTimestampError(IngestError):
	pass


class InsufficientDataError(ValidationError):
	pass


class WindowConfigError(ValidationError):
	pass


class ZeroLikelihoodError(ValidationError):
	"""Carries `t`, the period at which every state assigns zero density."""


class ReducibleChainError(ValidationError):
	"""Carries `classes`, the closed communicating classes found."""


class ChannelModelError(ValidationError):
	"""Carries `state`, the channel state with a probability outside [0, 1]."""


class DimensionMismatchError(ValidationError):
	pass


class InfeasibleActionError(ValidationError):
	pass


class PmfSupportError(ValidationError):
	pass


class SimulationInvariantError(ValidationError):
	pass

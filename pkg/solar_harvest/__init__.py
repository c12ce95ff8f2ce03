"""
Solar Harvest - data-driven solar harvesting models and transmission policies

	- `logger()` module loggers under the `solar_harvest` root
	- `throw()` raise a ValidationError (or a subclass) with a message
"""

import logging

__version__ = "0.1.0"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def logger(module: str | None = None) -> logging.Logger:
	"""Return the app logger, or a child logger for `module`."""
	root = logging.getLogger("solar_harvest")
	if not root.handlers:
		handler = logging.StreamHandler()
		handler.setFormatter(logging.Formatter(LOG_FORMAT))
		root.addHandler(handler)
		root.setLevel(logging.INFO)

	if not module:
		return root
	return root.getChild(module)


def throw(msg: str, exc: type[Exception] | None = None, **kwargs):
	"""Raise `exc` (ValidationError by default) with `msg`."""
	from solar_harvest.exceptions import ValidationError

	raise (exc or ValidationError)(msg, **kwargs)

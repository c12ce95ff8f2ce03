"""
Energy quanta arrivals.

One quantum is E_U = P_U * T_L, the energy of one basic-power transmission over
a management period. Harvested energy per period is irradiance * area * T_L *
efficiency; the Gaussian solar state model turns into a PMF over whole quanta
for the MDP, and the simulator accumulates raw energy with `recharge_step`.
"""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from scipy.special import erfc

import solar_harvest
from solar_harvest import throw
from solar_harvest.records import ConfigRecord

logger = solar_harvest.logger("energy_model")

SQRT2 = np.sqrt(2.0)
SQRT2PI = np.sqrt(2.0 * np.pi)
# energy.negative_tail -> label carried on the PMF
NEGATIVE_TAIL_POLICIES = {"zero": "assigned_to_zero", "truncate": "truncated_normal"}


@dataclass
class EnergyConfig(ConfigRecord):
	section = "energy"

	# basic transmission power (uW)
	p_unit: float = 18000.0
	period_s: float = 300.0
	# cm2
	panel_area: float = 0.1
	efficiency: float = 1.0
	# PMF truncation order, 0 picks 2 * ceil(max mean quanta) + 5
	q_max: int = 0
	# Gaussian mass below zero: all on Q=0, or conditioned away (harvest law truncated at 0)
	negative_tail: Literal["zero", "truncate"] = "zero"

	def validate(self):
		for fieldname in ("p_unit", "period_s", "panel_area", "efficiency"):
			if getattr(self, fieldname) <= 0:
				throw(f"{fieldname} must be positive", field_path=self.field_path(fieldname))
		if self.efficiency > 1:
			throw("Conversion efficiency cannot exceed 1", field_path=self.field_path("efficiency"))
		if self.q_max < 0:
			throw("q_max must be >= 1, or 0 for automatic", field_path=self.field_path("q_max"))

	@property
	def e_unit(self) -> float:
		"""One energy quantum, P_U * T_L (uJ)."""
		return self.p_unit * self.period_s

	@property
	def energy_scale(self) -> float:
		"""Irradiance (uW/cm2) to harvested energy per period (uJ)."""
		return self.panel_area * self.period_s * self.efficiency


@dataclass
class EnergyQuantaPmf:
	"""P(Q = q | S_H = j) for q = 0..q_max; rows are solar states."""

	probs: np.ndarray
	scaled_mean: np.ndarray
	scaled_var: np.ndarray
	e_unit: float
	negative_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))
	truncated_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))
	negative_tail_policy: str = "assigned_to_zero"

	@property
	def q_max(self) -> int:
		return self.probs.shape[1] - 1

	@property
	def n_states(self) -> int:
		return self.probs.shape[0]

	@property
	def mean_quanta(self) -> np.ndarray:
		return self.probs @ np.arange(self.q_max + 1)

	def mean_bias(self) -> dict:
		"""Realized PMF-mean offset from mu_bar / E_U and the bound it must respect."""
		target = self.scaled_mean / self.e_unit
		bias = self.mean_quanta - target
		bound = (self.negative_mass + self.truncated_mass) * self.q_max + 0.5
		return {"bias": bias, "bound": bound, "within_bound": bool(np.all(np.abs(bias) <= bound))}

	def validate(self) -> "EnergyQuantaPmf":
		if np.any(self.probs < 0):
			throw("Quanta PMF has negative entries", field_path="energy")
		if np.max(np.abs(self.probs.sum(axis=1) - 1)) > 1e-9:
			throw("Quanta PMF rows must sum to 1", field_path="energy")
		return self

	def to_frame(self) -> pd.DataFrame:
		states, quanta = np.meshgrid(np.arange(self.n_states), np.arange(self.q_max + 1), indexing="ij")
		frame = pd.DataFrame({"state": states.ravel(), "q": quanta.ravel(), "probability": self.probs.ravel()})
		frame.attrs["negative_tail_policy"] = self.negative_tail_policy
		return frame


@dataclass
class BatterySimState:
	residual: float = 0.0
	quanta_in_battery: int = 0


def quanta_pmf_deterministic(e_h: float, e_unit: float = 1.0, q_max: int | None = None) -> np.ndarray:
	"""PMF over quanta for a known harvest e_h: mass split between floor(e_h/E_U) and the next level."""
	if e_h < 0:
		throw(f"Harvested energy must be non-negative, got {e_h}")
	ratio = e_h / e_unit
	q = int(np.floor(ratio))
	frac = ratio - q
	size = max(q + 2, (q_max or 0) + 1)
	probs = np.zeros(size)
	probs[q] = 1.0 - frac
	probs[q + 1] += frac
	if q_max is not None and size > q_max + 1:
		probs = np.concatenate([probs[:q_max], [probs[q_max:].sum()]])
	return probs


def default_q_max(mean_quanta) -> int:
	return int(2 * np.ceil(np.max(mean_quanta)) + 5)


def _g1(i, u, s):
	return 0.5 * (erfc((i - u) / (s * SQRT2)) - erfc((i + 1 - u) / (s * SQRT2)))


def _g2(i, u, s):
	return s / SQRT2PI * (np.exp(-((i - 1 - u) ** 2) / (2 * s**2)) - np.exp(-((i - u) ** 2) / (2 * s**2)))


def _gaussian_row(u: float, s: float, q_max: int, negative_tail: str = "zero"):
	"""Closed-form quanta probabilities for harvest ~ N(u, s^2) in quanta units."""
	q = np.arange(q_max + 1, dtype=float)
	probs = (q + 1 - u) * _g1(q, u, s) - _g2(q + 1, u, s)
	lower = (u - q + 1) * _g1(q - 1, u, s) + _g2(q, u, s)
	probs[1:] += lower[1:]
	probs = np.maximum(probs, 0.0)

	negative = 0.5 * erfc(u / (s * SQRT2))
	truncated = max(0.0, 1.0 - negative - probs.sum())
	probs[-1] += truncated
	if negative_tail == "truncate":
		probs /= probs.sum()
	else:
		probs[0] += negative
	return probs, negative, truncated


def quanta_pmf_gaussian(params, cfg) -> EnergyQuantaPmf:
	"""
	Quanta PMF per solar state from the Gaussian harvest model.

	Mass of the Gaussian below zero goes to Q=0 (`negative_tail="zero"`) or is conditioned
	away (`"truncate"`); mass above q_max is lumped into q_max.
	"""
	scale = cfg.energy_scale
	scaled_mean = params.means * scale
	scaled_var = params.variances * scale**2
	e_unit = cfg.e_unit

	u = scaled_mean / e_unit
	s = np.sqrt(scaled_var) / e_unit
	q_max = cfg.q_max or default_q_max(u)

	rows, negative, truncated = [], [], []
	for u_j, s_j in zip(u, s, strict=True):
		if s_j < 1e-9:
			row = quanta_pmf_deterministic(max(u_j, 0.0), 1.0, q_max)
			neg, trunc = 0.0, 0.0
		else:
			row, neg, trunc = _gaussian_row(u_j, s_j, q_max, cfg.negative_tail)
		rows.append(row)
		negative.append(neg)
		truncated.append(trunc)

	pmf = EnergyQuantaPmf(
		probs=np.vstack(rows),
		scaled_mean=scaled_mean,
		scaled_var=scaled_var,
		e_unit=e_unit,
		negative_mass=np.array(negative),
		truncated_mass=np.array(truncated),
		negative_tail_policy=NEGATIVE_TAIL_POLICIES[cfg.negative_tail],
	).validate()

	report = pmf.mean_bias()
	if not report["within_bound"]:
		logger.warning(f"Quanta PMF mean bias {report['bias']} exceeds bound {report['bound']}")
	logger.debug(f"Quanta PMF built with q_max={q_max}, negative tail mass {pmf.negative_mass}")
	return pmf


def recharge_step(state: BatterySimState, e_h: float, n_b: int, e_unit: float = 1.0):
	"""
	Accumulate e_h onto the residual, convert whole quanta, clamp at n_b - 1.

	Returns (new_state, quanta_added, overflow_quanta).
	"""
	if e_h < 0:
		throw(f"Harvested energy must be non-negative, got {e_h}")
	whole, residual = divmod(state.residual + e_h, e_unit)
	whole = int(whole)
	room = n_b - 1 - state.quanta_in_battery
	added = min(whole, room)
	overflow = whole - added
	return BatterySimState(residual=residual, quanta_in_battery=state.quanta_in_battery + added), added, overflow


def quanta_arrivals(e_h_sequence, e_unit: float = 1.0, residual: float = 0.0) -> np.ndarray:
	"""Quanta produced each period by accumulate-and-floor, ignoring the battery limit."""
	cumulative = residual + np.cumsum(np.asarray(e_h_sequence, dtype=float))
	produced = np.floor(cumulative / e_unit).astype(int)
	return np.diff(produced, prepend=int(np.floor(residual / e_unit)))


def harvest_rate(pmf: EnergyQuantaPmf, stationary) -> float:
	"""Long-run quanta per period under the solar stationary law."""
	return float(np.asarray(stationary) @ pmf.mean_quanta)

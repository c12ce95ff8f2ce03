"""
Composite MDP over (solar state z, channel state x, battery level n) and its
discounted value iteration.

Actions are (power level w, modulation m) pairs sorted by (w, m); the silent
action appears once as (0, m0). Spending w quanta needs w <= n. Greedy ties go
to the first action in that order, i.e. lowest power, then lowest modulation.

Usage:
	model = build_mdp(hmm, pmf, fsmc, radio, n_battery=8, policy_class="onoff", modulation="8PSK")
	value, policy = value_iteration(model, solver)
"""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd

import solar_harvest
from solar_harvest import throw
from solar_harvest.exceptions import DimensionMismatchError, InfeasibleActionError
from solar_harvest.records import ConfigRecord

logger = solar_harvest.logger("mdp_core")

ROW_TOL = 1e-9


@dataclass
class Modulation(ConfigRecord):
	"""BER bound alpha * exp(-beta * snr) for one constellation."""

	modulation_name: str
	bits_per_symbol: int
	alpha: float
	beta: float

	def validate(self):
		if self.bits_per_symbol < 1:
			throw("Bits per symbol must be at least 1", field_path=self.field_path("bits_per_symbol"))
		if self.alpha <= 0:
			throw("alpha must be positive", field_path=self.field_path("alpha"))
		if self.beta <= 0:
			throw("beta must be positive", field_path=self.field_path("beta"))


def default_modulations() -> list[Modulation]:
	return [
		Modulation("QPSK", 2, 1.0, 2.0),
		Modulation("8PSK", 3, 0.6666666666666666, 0.29289321881345254),
		Modulation("16QAM", 4, 0.75, 0.2),
	]


@dataclass
class RadioConfig(ConfigRecord):
	section = "radio"

	# symbols/s
	symbol_rate: float = 100000.0
	packet_symbols: int = 1000
	period_s: float = 300.0
	# basic transmission power (uW)
	p_unit: float = 18000.0
	reference_power: float = 1000.0
	snr_db: float = 6.0
	# normalized: snr_db is referenced to reference_power; unit: snr_db is the basic-power SNR
	snr_reference: Literal["normalized", "unit"] = "normalized"
	modulations: list[Modulation] = field(default_factory=default_modulations)

	def validate(self):
		for fieldname in ("symbol_rate", "packet_symbols", "period_s", "p_unit", "reference_power"):
			if getattr(self, fieldname) <= 0:
				throw(f"{fieldname} must be positive", field_path=self.field_path(fieldname))
		if not self.modulations:
			throw("At least one modulation is required", field_path=self.field_path("modulations"))
		names = [m.modulation_name for m in self.modulations]
		if len(set(names)) != len(names):
			throw("Modulation names must be unique", field_path=self.field_path("modulations"))
		ratio = self.period_s / self.packet_duration
		if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
			throw(
				f"Management period {self.period_s} s is not a whole number of {self.packet_duration} s packets",
				field_path=self.field_path("period_s"),
			)

	@property
	def packet_duration(self) -> float:
		"""T_P = L_S / R_S"""
		return self.packet_symbols / self.symbol_rate

	@property
	def packets_per_period(self) -> int:
		"""D = T_L / T_P"""
		return round(self.period_s / self.packet_duration)

	@property
	def snr_unit(self) -> float:
		"""Linear SNR at the basic transmission power."""
		snr = 10 ** (self.snr_db / 10)
		if self.snr_reference == "unit":
			return snr
		return self.p_unit / self.reference_power * snr

	def modulation_index(self, name: str) -> int:
		for idx, m in enumerate(self.modulations):
			if m.modulation_name.lower() == str(name).lower():
				return idx
		throw(f"Unknown modulation {name}", field_path=self.field_path("modulations"))


@dataclass
class SolverConfig(ConfigRecord):
	section = "solver"

	policy_class: Literal["onoff", "composite"] = "onoff"
	# modulation used by on-off policies
	modulation: str = "8PSK"
	n_battery: int = 12
	# 0 picks 2 for on-off and the battery state count for composite
	n_power: int = 0
	discount: float = 0.99
	epsilon: float = 1e-6
	max_sweeps: int = 100000

	def validate(self):
		if not 0 <= self.discount < 1:
			throw("Discount factor must lie in [0, 1)", field_path=self.field_path("discount"))
		if self.epsilon <= 0:
			throw("Stopping tolerance must be positive", field_path=self.field_path("epsilon"))
		if self.n_battery < 1:
			throw("At least one battery state is required", field_path=self.field_path("n_battery"))
		if self.n_power < 0:
			throw("Power levels must be >= 1, or 0 for automatic", field_path=self.field_path("n_power"))
		if self.max_sweeps < 1:
			throw("max_sweeps must be positive", field_path=self.field_path("max_sweeps"))

	@property
	def power_levels(self) -> int:
		if self.n_power:
			return self.n_power
		return 2 if self.policy_class == "onoff" else self.n_battery


@dataclass
class MdpModel:
	solar_trans: np.ndarray
	channel_trans: np.ndarray
	battery_trans: np.ndarray
	actions: np.ndarray
	reward: np.ndarray
	quanta_pmf: np.ndarray
	policy_class: str = "composite"
	modulation_names: list = field(default_factory=list)
	eta: np.ndarray | None = None
	eta_clamped: np.ndarray | None = None
	metadata: dict = field(default_factory=dict)

	@property
	def dims(self) -> tuple[int, int, int]:
		return self.solar_trans.shape[0], self.channel_trans.shape[0], self.battery_trans.shape[2]

	@property
	def n_states(self) -> int:
		return int(np.prod(self.dims))

	@property
	def n_power(self) -> int:
		return self.battery_trans.shape[1]

	@property
	def n_actions(self) -> int:
		return len(self.actions)

	@property
	def feasible(self) -> np.ndarray:
		"""(N_B, N_A) mask: action power within the battery level."""
		levels = np.arange(self.dims[2])[:, None]
		return self.actions[None, :, 0] <= levels

	def action_index(self, w: int, m: int) -> int:
		hits = np.flatnonzero((self.actions[:, 0] == w) & ((self.actions[:, 1] == m) | (w == 0)))
		if not len(hits):
			throw(f"Action (w={w}, m={m}) is not in the action set", InfeasibleActionError)
		return int(hits[0])

	def validate(self) -> "MdpModel":
		n_h, n_c, n_b = self.dims
		if self.battery_trans.shape != (n_h, self.n_power, n_b, n_b):
			throw(f"Battery tensor shape {self.battery_trans.shape} does not match dims {self.dims}", DimensionMismatchError)
		if self.reward.shape != (n_c, self.n_actions):
			throw(f"Reward table shape {self.reward.shape} does not match ({n_c}, {self.n_actions})", DimensionMismatchError)
		if self.quanta_pmf.shape[0] != n_h:
			throw("Quanta PMF rows do not match the solar states", DimensionMismatchError)
		if np.any(self.actions[:, 0] >= self.n_power):
			throw("Action power exceeds the power levels", DimensionMismatchError)

		for name, matrix in (("solar", self.solar_trans), ("channel", self.channel_trans)):
			if np.max(np.abs(matrix.sum(axis=1) - 1)) > ROW_TOL:
				throw(f"{name} transition rows must sum to 1", field_path=name)

		sums = self.battery_trans.sum(axis=3)
		for w in range(self.n_power):
			live = sums[:, w, w:]
			if live.size and np.max(np.abs(live - 1)) > ROW_TOL:
				throw(f"Battery transitions for power {w} do not sum to 1", field_path="battery")

		if np.any(self.reward < 0):
			throw("Rewards must be non-negative", field_path="reward")
		if np.any(self.reward[:, self.actions[:, 0] == 0] != 0):
			throw("Silent actions must earn zero reward", field_path="reward")
		return self

	def policy_battery(self, actions: np.ndarray) -> np.ndarray:
		"""Battery kernel under a deterministic policy, shape (N_H, N_C, N_B, N_B)."""
		n_h, n_c, n_b = self.dims
		power = self.actions[actions, 0]
		z = np.arange(n_h)[:, None, None]
		n = np.arange(n_b)[None, None, :]
		return self.battery_trans[z, power, n]

	def transition_matrix(self, actions: np.ndarray) -> np.ndarray:
		"""Row-stochastic (S, S) matrix of a deterministic policy, states in C order of (z, x, n)."""
		kernel = self.policy_battery(actions)
		full = np.einsum("ab,cd,acef->acebdf", self.solar_trans, self.channel_trans, kernel)
		return full.reshape(self.n_states, self.n_states)

	def policy_rewards(self, actions: np.ndarray) -> np.ndarray:
		n_h, n_c, n_b = self.dims
		x = np.arange(n_c)[None, :, None]
		return np.broadcast_to(self.reward[x, actions], (n_h, n_c, n_b))


@dataclass
class ValueFunction:
	v: np.ndarray
	q: np.ndarray
	residual: float
	residual_trace: list
	sweeps: int
	converged: bool
	discount: float

	def to_frame(self) -> pd.DataFrame:
		z, x, n = np.indices(self.v.shape)
		return pd.DataFrame({"z": z.ravel(), "x": x.ravel(), "n": n.ravel(), "value": self.v.ravel()})


@dataclass
class Policy:
	actions: np.ndarray
	action_table: np.ndarray
	policy_class: str
	modulation_names: list = field(default_factory=list)
	thresholds: np.ndarray | None = None

	@property
	def power(self) -> np.ndarray:
		return self.action_table[self.actions, 0]

	@property
	def modulation(self) -> np.ndarray:
		return self.action_table[self.actions, 1]

	def action(self, z: int, x: int, n: int) -> tuple[int, int]:
		w, m = self.action_table[self.actions[z, x, n]]
		return int(w), int(m)

	def to_frame(self) -> pd.DataFrame:
		z, x, n = np.indices(self.actions.shape)
		modulation = self.modulation.ravel()
		names = [self.modulation_names[m] if self.modulation_names else str(m) for m in modulation]
		return pd.DataFrame(
			{
				"z": z.ravel(),
				"x": x.ravel(),
				"n": n.ravel(),
				"w": self.power.ravel(),
				"m": modulation,
				"modulation": names,
			}
		)


def _eta(edges, gamma0: float, w: float, alpha: float, beta: float, snr_unit: float) -> np.ndarray:
	"""BER bound per channel state, evaluated with shifted exponentials to avoid underflow."""
	lo, hi = edges[:-1], edges[1:]
	width = hi - lo
	c = (w * beta * snr_unit + 2.0) / (2.0 * gamma0)
	with np.errstate(invalid="ignore", over="ignore"):
		num = np.exp(-(c - 1.0 / gamma0) * lo) * -np.expm1(-c * width)
		den = -np.expm1(-width / gamma0)
	return alpha / (w * beta * snr_unit + 2.0) * num / den


def ber_bound(i: int, w: int, m: int, radio, channel, clamp: bool = True, return_clamped: bool = False):
	"""Average bit error rate bound at channel state i for power level w and modulation m."""
	if w < 1:
		throw("The error bound needs a transmitting power level (w >= 1)", InfeasibleActionError)
	mod = radio.modulations[m]
	eta = float(_eta(channel.edges, channel.gamma0, w, mod.alpha, mod.beta, radio.snr_unit)[i])
	clamped = eta > 1.0
	if clamp:
		eta = min(max(eta, 0.0), 1.0)
	return (eta, clamped) if return_clamped else eta


def packet_success(eta: float, bits: int) -> float:
	"""Probability that all `bits` bits of a packet decode."""
	with np.errstate(divide="ignore"):
		return float(np.exp(bits * np.log1p(-min(eta, 1.0))))


def reward(i: int, n: int, w: int, m: int, radio, channel=None, eta: float | None = None) -> float:
	"""Expected delivered bits per second, (1 / T_P) * chi * L_S * (1 - eta)^(chi * L_S)."""
	if w < 0 or w > n:
		throw(f"Power level {w} is infeasible at battery level {n}", InfeasibleActionError)
	if w == 0:
		return 0.0
	if eta is None:
		eta = ber_bound(i, w, m, radio, channel)
	bits = radio.modulations[m].bits_per_symbol * radio.packet_symbols
	return bits / radio.packet_duration * packet_success(eta, bits)


def build_action_table(n_power: int, n_modulations: int, modulation: int | None = None) -> np.ndarray:
	mods = [modulation] if modulation is not None else list(range(n_modulations))
	table = [(0, mods[0])]
	table.extend((w, m) for w in range(1, n_power) for m in mods)
	return np.array(table, dtype=int)


def battery_transitions(quanta_pmf: np.ndarray, n_battery: int, n_power: int) -> np.ndarray:
	"""
	P_w(n' | z, n) for w <= n: the battery moves to min(N_B - 1, n - w + q) with q ~ P(Q | z).

	Rows with w > n are infeasible and left at zero.
	"""
	quanta_pmf = np.asarray(quanta_pmf, dtype=float)
	n_h, n_q = quanta_pmf.shape
	kernel = np.zeros((n_h, n_power, n_battery, n_battery))
	q = np.arange(n_q)
	for w in range(n_power):
		for n in range(w, n_battery):
			target = np.minimum(n - w + q, n_battery - 1)
			for z in range(n_h):
				np.add.at(kernel[z, w, n], target, quanta_pmf[z])
	return kernel


def assemble_mdp(
	solar_trans,
	channel_trans,
	quanta_pmf,
	reward_table,
	actions,
	n_battery: int,
	policy_class: str = "composite",
	modulation_names=None,
	**extra,
) -> MdpModel:
	"""Build and validate an MdpModel from raw arrays."""
	actions = np.asarray(actions, dtype=int)
	n_power = int(actions[:, 0].max()) + 1
	quanta_pmf = np.atleast_2d(np.asarray(quanta_pmf, dtype=float))
	return MdpModel(
		solar_trans=np.atleast_2d(np.asarray(solar_trans, dtype=float)),
		channel_trans=np.atleast_2d(np.asarray(channel_trans, dtype=float)),
		battery_trans=battery_transitions(quanta_pmf, n_battery, n_power),
		actions=actions,
		reward=np.asarray(reward_table, dtype=float),
		quanta_pmf=quanta_pmf,
		policy_class=policy_class,
		modulation_names=list(modulation_names or []),
		**extra,
	).validate()


def build_mdp(
	hmm,
	pmf,
	fsmc,
	radio,
	n_battery: int,
	policy_class: str = "onoff",
	modulation: "str | int | None" = None,
	n_power: int | None = None,
) -> MdpModel:
	if pmf.n_states != hmm.n_states:
		throw(f"Quanta PMF has {pmf.n_states} solar states, model has {hmm.n_states}", DimensionMismatchError)
	if fsmc.transitions.shape != (len(fsmc.edges) - 1,) * 2:
		throw("Channel model transitions do not match its thresholds", DimensionMismatchError)
	if n_battery < 1:
		throw("At least one battery state is required", DimensionMismatchError)

	names = [m.modulation_name for m in radio.modulations]
	if policy_class == "onoff":
		if isinstance(modulation, (int, np.integer)):
			mod_idx = int(modulation)
		else:
			mod_idx = radio.modulation_index(modulation or names[0])
		n_power = n_power or 2
		if n_power != 2:
			throw("On-off policies use exactly two power levels", field_path="solver.n_power")
		actions = build_action_table(2, len(names), mod_idx)
	elif policy_class == "composite":
		n_power = n_power or n_battery
		actions = build_action_table(n_power, len(names))
	else:
		throw(f"Unknown policy class {policy_class}", field_path="solver.policy_class")

	n_c = fsmc.n_states
	eta = np.zeros((n_c, len(actions)))
	clamped = np.zeros((n_c, len(actions)), dtype=bool)
	rewards = np.zeros((n_c, len(actions)))
	for a, (w, m) in enumerate(actions):
		if w == 0:
			continue
		mod = radio.modulations[m]
		raw = _eta(fsmc.edges, fsmc.gamma0, w, mod.alpha, mod.beta, radio.snr_unit)
		clamped[:, a] = raw > 1.0
		eta[:, a] = np.clip(raw, 0.0, 1.0)
		rewards[:, a] = [reward(i, w, w, m, radio, eta=eta[i, a]) for i in range(n_c)]

	if clamped.any():
		logger.warning(f"Error bound clamped to 1 for {int(clamped.sum())} (state, action) pairs")

	model = MdpModel(
		solar_trans=hmm.transitions,
		channel_trans=fsmc.transitions,
		battery_trans=battery_transitions(pmf.probs, n_battery, n_power),
		actions=actions,
		reward=rewards,
		quanta_pmf=pmf.probs,
		policy_class=policy_class,
		modulation_names=names,
		eta=eta,
		eta_clamped=clamped,
		metadata={
			"snr_unit": radio.snr_unit,
			"packet_duration": radio.packet_duration,
			"packets_per_period": radio.packets_per_period,
			"snr_reference": radio.snr_reference,
		},
	).validate()

	logger.info(f"Built {policy_class} MDP with dims {model.dims} and {model.n_actions} actions")
	return model


def backup(model: MdpModel, v: np.ndarray, discount: float) -> np.ndarray:
	"""One Bellman backup; returns Q of shape (N_H, N_C, N_B, N_A), -inf where infeasible."""
	# mixed[z, x, n'] = sum_{z', x'} A[z, z'] C[x, x'] V[z', x', n']
	mixed = np.einsum("ij,kl,jln->ikn", model.solar_trans, model.channel_trans, v)
	expected = np.einsum("zwnm,zxm->zxnw", model.battery_trans, mixed)
	power = model.actions[:, 0]
	q = model.reward[None, :, None, :] + discount * expected[..., power]
	return np.where(model.feasible[None, None], q, -np.inf)


def bellman_residual(model: MdpModel, v, discount: float | None = None) -> float:
	if isinstance(v, ValueFunction):
		discount = v.discount if discount is None else discount
		v = v.v
	if discount is None:
		throw("A discount factor is required")
	return float(np.max(np.abs(backup(model, v, discount).max(axis=-1) - v)))


def greedy_policy(model: MdpModel, q: np.ndarray) -> Policy:
	return Policy(
		actions=np.argmax(q, axis=-1),
		action_table=model.actions,
		policy_class=model.policy_class,
		modulation_names=model.modulation_names,
	)


def value_iteration(model: MdpModel, cfg=None, discount: float | None = None, epsilon: float | None = None, max_sweeps: int | None = None):
	"""Discounted value iteration from V = 0; returns (ValueFunction, Policy)."""
	discount = cfg.discount if discount is None else discount
	epsilon = cfg.epsilon if epsilon is None else epsilon
	max_sweeps = (cfg.max_sweeps if cfg is not None else None) if max_sweeps is None else max_sweeps
	max_sweeps = max_sweeps or 100000
	if not 0 <= discount < 1:
		throw("Discount factor must lie in [0, 1)", field_path="solver.discount")

	v = np.zeros(model.dims)
	trace = []
	converged = False
	for _ in range(max_sweeps):
		q = backup(model, v, discount)
		v_new = q.max(axis=-1)
		residual = float(np.max(np.abs(v_new - v)))
		trace.append(residual)
		v = v_new
		if residual <= epsilon:
			converged = True
			break

	if not converged:
		logger.warning(f"Value iteration stopped after {max_sweeps} sweeps with residual {trace[-1]:.3e}")
	else:
		logger.info(f"Value iteration converged in {len(trace)} sweeps (residual {trace[-1]:.3e})")

	value = ValueFunction(
		v=v,
		q=q,
		residual=trace[-1],
		residual_trace=trace,
		sweeps=len(trace),
		converged=converged,
		discount=discount,
	)
	return value, greedy_policy(model, q)

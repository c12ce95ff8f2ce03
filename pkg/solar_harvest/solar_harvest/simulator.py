"""
Monte Carlo evaluation of transmission policies.

Each period: observe the period-mean irradiance, update the belief, observe
the channel state, pick an action, spend w quanta, deliver bits and finally
harvest. Energy causality and conservation are asserted every step.

Random streams (irradiance, channel, belief sampling, initial battery, packet
draws, PMF harvest draws) are spawned from one SeedSequence per episode.

Usage:
	trace = run_episode(setup)
	table = sweep([setup_a, setup_b], workers=4)
"""

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pkgutil import resolve_name
from typing import Literal

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

import solar_harvest
from solar_harvest import hooks, throw
from solar_harvest.exceptions import InsufficientDataError, SimulationInvariantError
from solar_harvest.records import ConfigRecord
from solar_harvest.solar_harvest.belief_runtime import Belief, filter_beliefs, mixed_action
from solar_harvest.solar_harvest.channel_model import jakes_generate, quantize_gain, sample_fsmc
from solar_harvest.solar_harvest.energy_model import BatterySimState, quanta_arrivals, recharge_step
from solar_harvest.solar_harvest.mdp_core import _eta, packet_success
from solar_harvest.solar_harvest.solar_hmm import sample_observations

logger = solar_harvest.logger("simulator")

STREAMS = ("irradiance", "channel", "belief", "battery", "packets", "harvest")
CI_BATCHES = 20


@dataclass
class SimConfig(ConfigRecord):
	section = "simulation"

	n_periods: int = 100000
	seed: int = 0
	policy: Literal["solved", "myopic1", "myopic2", "ttfr"] = "solved"
	belief_mode: Literal["sample", "max", "oracle"] = "sample"
	myopic1_modulation: str = "QPSK"
	myopic2_modulation: str = "16QAM"
	ttfr_horizon: int = 24
	irradiance_source: Literal["hmm", "recorded"] = "hmm"
	harvest_mode: Literal["accumulate", "pmf"] = "accumulate"
	channel_source: Literal["jakes", "fsmc"] = "jakes"
	bit_accounting: Literal["expected", "bernoulli"] = "expected"
	# -1 draws the initial battery level uniformly
	initial_battery: int = -1
	record_trace: bool = True

	def validate(self):
		if self.n_periods < 1:
			throw("n_periods must be at least 1", field_path=self.field_path("n_periods"))
		if self.ttfr_horizon < 1:
			throw("t-TFR horizon must be at least 1 period", field_path=self.field_path("ttfr_horizon"))
		if self.initial_battery < -1:
			throw(
				"initial_battery must be -1 (random) or a battery level",
				field_path=self.field_path("initial_battery"),
			)
		if self.policy == "ttfr" and self.harvest_mode == "pmf":
			throw(
				"t-TFR needs the physical harvest trace, use harvest_mode accumulate",
				field_path=self.field_path("harvest_mode"),
			)


@dataclass
class SimSetup:
	"""Everything one episode needs: config records plus the built models."""

	sim: object
	radio: object
	energy: object
	channel: object
	n_battery: int
	hmm: object
	fsmc: object
	pmf: object
	policy: object = None
	onoff_modulation: int = 0
	recorded: np.ndarray | None = None
	label: dict = field(default_factory=dict)

	def echo(self) -> dict:
		return {
			"sim": self.sim.as_dict(),
			"radio": self.radio.as_dict(),
			"energy": self.energy.as_dict(),
			"channel": self.channel.as_dict(),
			"n_battery": self.n_battery,
			"hmm_means": self.hmm.means.tolist(),
			"label": self.label,
		}

	def config_hash(self) -> str:
		payload = json.dumps(self.echo(), sort_keys=True, default=str)
		return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class SimTrace:
	irradiance: np.ndarray
	solar_state: np.ndarray
	quanta_added: np.ndarray
	overflow: np.ndarray
	battery: np.ndarray
	gain: np.ndarray
	channel_state: np.ndarray
	belief: np.ndarray | None
	power: np.ndarray
	modulation: np.ndarray
	packets: np.ndarray
	bits: np.ndarray
	period_s: float
	initial_battery: int
	belief_resets: int = 0

	@property
	def n_periods(self) -> int:
		return len(self.bits)

	@property
	def rate(self) -> float:
		"""Average delivered bits per second."""
		return float(self.bits.sum() / (self.n_periods * self.period_s))

	@property
	def outage(self) -> int:
		return int(np.sum(self.battery == 0))

	@property
	def overflow_total(self) -> int:
		return int(self.overflow.sum())

	@property
	def q_bar(self) -> float:
		"""Realized quanta produced per period, stored or discarded."""
		return float((self.quanta_added.sum() + self.overflow.sum()) / self.n_periods)

	@property
	def q_bar_with_initial(self) -> float:
		return self.q_bar + self.initial_battery / self.n_periods

	def rate_ci(self, batches: int = CI_BATCHES) -> tuple[float, float]:
		"""95% batch-means confidence interval of the rate."""
		n = min(batches, self.n_periods)
		if n < 2:
			return self.rate, self.rate
		means = np.array([chunk.mean() for chunk in np.array_split(self.bits, n)]) / self.period_s
		half = stats.t.ppf(0.975, n - 1) * means.std(ddof=1) / np.sqrt(n)
		return float(self.rate - half), float(self.rate + half)

	def aggregates(self) -> dict:
		low, high = self.rate_ci()
		return {
			"rate": self.rate,
			"rate_ci_low": low,
			"rate_ci_high": high,
			"outage": self.outage,
			"overflow": self.overflow_total,
			"q_bar": self.q_bar,
			"belief_resets": self.belief_resets,
			"n_periods": self.n_periods,
		}

	def to_frame(self) -> pd.DataFrame:
		frame = pd.DataFrame(
			{
				"irradiance": self.irradiance,
				"solar_state": self.solar_state,
				"quanta_added": self.quanta_added,
				"overflow": self.overflow,
				"battery": self.battery,
				"gain": self.gain,
				"channel_state": self.channel_state,
				"w": self.power,
				"m": self.modulation,
				"packets": self.packets,
				"bits": self.bits,
			}
		)
		if self.belief is not None:
			for j in range(self.belief.shape[1]):
				frame[f"zeta_{j}"] = self.belief[:, j]
		return frame


def myopic_policy_i(x: int, n: int, n_power: int = 2, modulation: int = 0) -> tuple[int, int]:
	"""Lowest power whenever the battery allows."""
	return (min(1, n), modulation)


def myopic_policy_ii(x: int, n: int, n_power: int = 2, modulation: int = 0) -> tuple[int, int]:
	"""Largest power the battery allows."""
	return (min(n, n_power - 1), modulation)


def rate_table(radio, edges, gamma0: float, n_power: int) -> tuple[np.ndarray, np.ndarray]:
	"""Expected bits/s and packet success probability by (channel state, power level, modulation); zero for w = 0."""
	n_c = len(edges) - 1
	table = np.zeros((n_c, n_power, len(radio.modulations)))
	success = np.zeros_like(table)
	for m, mod in enumerate(radio.modulations):
		bits = mod.bits_per_symbol * radio.packet_symbols
		for w in range(1, n_power):
			eta = np.clip(_eta(edges, gamma0, w, mod.alpha, mod.beta, radio.snr_unit), 0.0, 1.0)
			success[:, w, m] = [packet_success(e, bits) for e in eta]
			table[:, w, m] = bits / radio.packet_duration * success[:, w, m]
	return table, success


def t_tfr_oracle(horizon_t: int, future_channel, future_quanta, rewards_by_state, battery: int, n_battery: int) -> np.ndarray:
	"""
	On/off schedule maximizing the summed reward over the next `horizon_t` periods,
	knowing the channel states and quanta arrivals in advance. Ties stay silent.
	"""
	future_channel = np.asarray(future_channel, dtype=int)
	future_quanta = np.asarray(future_quanta, dtype=int)
	if horizon_t > len(future_channel) or horizon_t > len(future_quanta):
		throw(f"Horizon {horizon_t} exceeds the {min(len(future_channel), len(future_quanta))} known periods", InsufficientDataError)

	top = n_battery - 1
	levels = np.arange(n_battery)
	value = np.zeros(n_battery)
	decide = np.zeros((horizon_t, n_battery), dtype=bool)
	for t in range(horizon_t - 1, -1, -1):
		r = rewards_by_state[future_channel[t]]
		off = value[np.minimum(levels + future_quanta[t], top)]
		on = np.full(n_battery, -np.inf)
		on[1:] = r + value[np.minimum(levels[1:] - 1 + future_quanta[t], top)]
		decide[t] = on > off
		value = np.maximum(on, off)

	schedule = np.zeros(horizon_t, dtype=int)
	b = battery
	for t in range(horizon_t):
		schedule[t] = int(decide[t, b])
		b = min(b - schedule[t] + future_quanta[t], top)
	return schedule


def _irradiance_path(setup: SimSetup, rng, n: int):
	if setup.sim.irradiance_source == "recorded":
		if setup.recorded is None or len(setup.recorded) < n:
			have = 0 if setup.recorded is None else len(setup.recorded)
			throw(f"Recorded irradiance covers {have} periods, {n} needed", InsufficientDataError)
		values = np.asarray(setup.recorded[:n], dtype=float)
		states = np.full(n, -1)
		return states, values
	states, obs = sample_observations(setup.hmm, n, rng)
	return states[0], obs[0]


def _channel_path(setup: SimSetup, rng, n: int):
	if setup.sim.channel_source == "fsmc":
		states = sample_fsmc(setup.fsmc, n, rng)
		return np.full(n, np.nan), states
	gains = jakes_generate(setup.channel.gamma0, setup.channel.fd_norm, n, rng, setup.channel.n_oscillators)
	return gains, quantize_gain(gains, setup.fsmc.edges)


def _power_levels(setup: SimSetup) -> int:
	kind = setup.sim.policy
	if kind == "solved":
		return max(int(setup.policy.action_table[:, 0].max()) + 1, 2)
	if kind == "ttfr":
		return 2
	return max(setup.n_battery, 2)


def _check_sources(setup: SimSetup):
	sim = setup.sim
	if sim.policy == "solved" and setup.policy is None:
		throw("A solved policy is required for policy=solved", field_path="simulation.policy")
	if sim.irradiance_source == "recorded":
		if sim.harvest_mode == "pmf":
			throw("PMF harvest mode needs HMM-sampled solar states", field_path="simulation.harvest_mode")
		if sim.policy == "solved" and sim.belief_mode == "oracle":
			throw("Oracle belief needs HMM-sampled irradiance", field_path="simulation.belief_mode")


def run_episode(setup: SimSetup) -> SimTrace:
	_check_sources(setup)
	sim = setup.sim
	n = sim.n_periods
	n_b = setup.n_battery
	seeds = np.random.SeedSequence(sim.seed).spawn(len(STREAMS))
	streams = {name: np.random.default_rng(s) for name, s in zip(STREAMS, seeds, strict=True)}

	solar_state, irradiance = _irradiance_path(setup, streams["irradiance"], n)
	gain, channel_state = _channel_path(setup, streams["channel"], n)

	e_unit = setup.energy.e_unit
	harvest = np.maximum(irradiance, 0.0) * setup.energy.energy_scale
	_, success = rate_table(setup.radio, setup.fsmc.edges, setup.fsmc.gamma0, _power_levels(setup))

	kind = sim.policy
	beliefs, resets = None, 0
	if kind == "solved" and sim.belief_mode != "oracle":
		beliefs, resets = filter_beliefs(irradiance, setup.hmm, return_resets=True)

	if kind in ("myopic1", "myopic2"):
		baseline = resolve_name(hooks.policy_sources[kind])
		modulation = setup.radio.modulation_index(sim.myopic1_modulation if kind == "myopic1" else sim.myopic2_modulation)
	if kind == "ttfr":
		on_rewards = rate_table(setup.radio, setup.fsmc.edges, setup.fsmc.gamma0, 2)[0][:, 1, setup.onoff_modulation]
		schedule = np.zeros(n, dtype=int)

	battery0 = sim.initial_battery if sim.initial_battery >= 0 else int(streams["battery"].integers(0, n_b))
	if battery0 > n_b - 1:
		throw(f"Initial battery {battery0} exceeds the top level {n_b - 1}", field_path="simulation.initial_battery")

	pmf_mode = sim.harvest_mode == "pmf"
	cum_pmf = np.cumsum(setup.pmf.probs, axis=1) if pmf_mode else None
	harvest_rng = streams["harvest"]
	packet_rng = streams["packets"]
	bernoulli = sim.bit_accounting == "bernoulli"
	packets_per_period = setup.radio.packets_per_period
	bits_per_packet = [m.bits_per_symbol * setup.radio.packet_symbols for m in setup.radio.modulations]

	battery = np.empty(n, dtype=int)
	added = np.zeros(n, dtype=int)
	overflow = np.zeros(n, dtype=int)
	power = np.zeros(n, dtype=int)
	modul = np.zeros(n, dtype=int)
	packets = np.zeros(n)
	bits = np.zeros(n)

	state = BatterySimState(residual=0.0, quanta_in_battery=battery0)
	spent_total = added_total = 0
	for t in range(n):
		level = state.quanta_in_battery
		battery[t] = level
		x = int(channel_state[t])

		if kind == "solved":
			if sim.belief_mode == "oracle":
				w, m = setup.policy.action(int(solar_state[t]), x, level)
			else:
				w, m = mixed_action(Belief(zeta=beliefs[t]), setup.policy, x, level, streams["belief"], mode=sim.belief_mode)
		elif kind == "ttfr":
			if t % sim.ttfr_horizon == 0:
				horizon = min(sim.ttfr_horizon, n - t)
				future = quanta_arrivals(harvest[t : t + horizon], e_unit, state.residual)
				schedule[t : t + horizon] = t_tfr_oracle(horizon, channel_state[t : t + horizon], future, on_rewards, level, n_b)
			w, m = int(schedule[t] and level >= 1), setup.onoff_modulation
		else:
			w, m = baseline(x, level, n_b, modulation)

		if w > level:
			throw(f"Action w={w} exceeds battery level {level} at period {t}", SimulationInvariantError, t=t)
		power[t], modul[t] = w, m

		if w:
			p_ok = success[x, w, m]
			packets[t] = packet_rng.binomial(packets_per_period, p_ok) if bernoulli else packets_per_period * p_ok
			bits[t] = packets[t] * bits_per_packet[m]

		drained = BatterySimState(residual=state.residual, quanta_in_battery=level - w)
		if pmf_mode:
			q = int(min(np.searchsorted(cum_pmf[int(solar_state[t])], harvest_rng.random(), side="right"), setup.pmf.q_max))
			room = n_b - 1 - drained.quanta_in_battery
			gained, lost = min(q, room), max(q - room, 0)
			state = BatterySimState(residual=0.0, quanta_in_battery=drained.quanta_in_battery + gained)
		else:
			state, gained, lost = recharge_step(drained, harvest[t], n_b, e_unit)

		added[t], overflow[t] = gained, lost
		spent_total += w
		added_total += gained
		if spent_total > battery0 + added_total:
			throw(f"Energy causality violated at period {t}", SimulationInvariantError, t=t)
		if state.quanta_in_battery != battery0 + added_total - spent_total or not 0 <= state.quanta_in_battery < n_b:
			throw(f"Battery bookkeeping broken at period {t}", SimulationInvariantError, t=t)

	trace = SimTrace(
		irradiance=irradiance,
		solar_state=solar_state,
		quanta_added=added,
		overflow=overflow,
		battery=battery,
		gain=gain,
		channel_state=np.asarray(channel_state, dtype=int),
		belief=beliefs if sim.record_trace else None,
		power=power,
		modulation=modul,
		packets=packets,
		bits=bits,
		period_s=setup.radio.period_s,
		initial_battery=battery0,
		belief_resets=resets,
	)
	logger.info(
		f"Episode {kind} ({n} periods, seed {sim.seed}): rate {trace.rate:.6g} bits/s, "
		f"outage {trace.outage}, overflow {trace.overflow_total}, q_bar {trace.q_bar:.4f}"
	)
	return trace


def _episode_rows(setup: SimSetup, metrics) -> list[dict]:
	trace = run_episode(setup)
	agg = trace.aggregates()
	base = {"config_hash": setup.config_hash(), **setup.label}
	rows = []
	for metric in metrics:
		row = {**base, "metric": metric, "value": agg[metric], "ci_low": np.nan, "ci_high": np.nan}
		if metric == "rate":
			row["ci_low"], row["ci_high"] = agg["rate_ci_low"], agg["rate_ci_high"]
		rows.append(row)
	return rows


def sweep(setups: list[SimSetup], metrics=("rate",), workers: int = 1, progress: bool = False) -> pd.DataFrame:
	"""Run every setup and return a tidy table: one row per setup per metric, in input order."""
	unknown = set(metrics) - {"rate", "outage", "overflow", "q_bar", "belief_resets"}
	if unknown:
		throw(f"Unknown metrics {sorted(unknown)}")

	if workers > 1 and len(setups) > 1:
		with ProcessPoolExecutor(max_workers=workers) as pool:
			chunks = list(tqdm(pool.map(_episode_rows, setups, [metrics] * len(setups)), total=len(setups), disable=not progress))
	else:
		chunks = [_episode_rows(s, metrics) for s in tqdm(setups, disable=not progress)]

	frame = pd.DataFrame([row for chunk in chunks for row in chunk])
	logger.info(f"Sweep finished: {len(setups)} configurations, {len(frame)} rows")
	return frame

"""
Rayleigh fading channel: finite-state Markov model and a sum-of-sinusoids generator.

Channel power is split by thresholds 0 = G_0 < G_1 < ... < G_N = inf into N states.
Transition matrices are stored [from][to] (row-stochastic).
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

import solar_harvest
from solar_harvest import throw
from solar_harvest.exceptions import ChannelModelError
from solar_harvest.records import ConfigRecord

logger = solar_harvest.logger("channel_model")

PROB_TOL = 1e-12
GENERATOR_CHUNK = 16384


@dataclass
class ChannelConfig(ConfigRecord):
	section = "channel"

	# interior thresholds, 0 and inf are implied
	thresholds: list[float] = field(default_factory=lambda: [0.3, 0.6, 1.0, 2.0, 3.0])
	gamma0: float = 1.0
	fd_norm: float = 0.05
	n_oscillators: int = 64

	def validate(self):
		if not isinstance(self.thresholds, list):
			throw("Thresholds must be a list", field_path=self.field_path("thresholds"))
		values = [float(t) for t in self.thresholds]
		if any(not np.isfinite(t) or t <= 0 for t in values):
			throw("Interior thresholds must be finite and positive", field_path=self.field_path("thresholds"))
		if any(b <= a for a, b in zip(values, values[1:], strict=False)):
			throw("Thresholds must be strictly increasing", field_path=self.field_path("thresholds"))
		self.thresholds = values
		if self.gamma0 <= 0:
			throw("Average channel power must be positive", field_path=self.field_path("gamma0"))
		if self.fd_norm <= 0:
			throw("Normalized Doppler must be positive", field_path=self.field_path("fd_norm"))
		if self.n_oscillators < 1:
			throw("At least one oscillator is needed", field_path=self.field_path("n_oscillators"))

	@property
	def edges(self) -> np.ndarray:
		"""Full threshold grid 0 = G_0 < ... < G_N = inf."""
		return np.array([0.0, *self.thresholds, np.inf])

	@property
	def n_states(self) -> int:
		return len(self.thresholds) + 1


@dataclass(frozen=True)
class ChannelFsmc:
	edges: np.ndarray
	stationary: np.ndarray
	transitions: np.ndarray
	gamma0: float
	fd_norm: float

	@property
	def n_states(self) -> int:
		return len(self.stationary)

	def to_frame(self) -> pd.DataFrame:
		rows = []
		for i in range(self.n_states):
			for k in range(max(0, i - 1), min(self.n_states, i + 2)):
				rows.append(
					{
						"state": i,
						"lower": self.edges[i],
						"upper": self.edges[i + 1],
						"stationary": self.stationary[i],
						"to_state": k,
						"probability": self.transitions[i, k],
					}
				)
		return pd.DataFrame(rows)


def db_to_linear(db: float) -> float:
	return 10.0 ** (db / 10.0)


def level_crossing_rate(gamma, gamma0: float, fd_norm: float) -> np.ndarray:
	"""Expected crossings of power level gamma per period; zero at 0 and at infinity."""
	gamma = np.asarray(gamma, dtype=float)
	finite = np.isfinite(gamma)
	safe = np.where(finite, gamma, 0.0)
	rate = np.sqrt(2 * np.pi * safe / gamma0) * fd_norm * np.exp(-safe / gamma0)
	return np.where(finite, rate, 0.0)


def build_fsmc(cfg) -> ChannelFsmc:
	"""Stationary probabilities and neighbor-only transitions of the quantized fading power."""
	edges = cfg.edges
	gamma0, fd_norm = cfg.gamma0, cfg.fd_norm
	n = len(edges) - 1

	tail = np.exp(-edges / gamma0)
	stationary = tail[:-1] - tail[1:]
	if np.any(stationary <= 0):
		state = int(np.flatnonzero(stationary <= 0)[0])
		throw(f"Channel state {state} has zero stationary probability", ChannelModelError, state=state, field_path="channel.thresholds")

	crossings = level_crossing_rate(edges, gamma0, fd_norm)
	transitions = np.zeros((n, n))
	for i in range(n):
		up = crossings[i + 1] / stationary[i] if i < n - 1 else 0.0
		down = crossings[i] / stationary[i] if i > 0 else 0.0
		stay = 1.0 - up - down
		for prob in (up, down, stay):
			if not 0.0 <= prob <= 1.0:
				throw(
					f"Channel state {i} gets transition probability {prob:.4f}; "
					f"Doppler {fd_norm} is too fast for this quantization",
					ChannelModelError,
					state=i,
					field_path="channel.fd_norm",
				)
		transitions[i, i] = stay
		if i < n - 1:
			transitions[i, i + 1] = up
		if i > 0:
			transitions[i, i - 1] = down

	logger.debug(f"FSMC built with {n} states, stationary {np.round(stationary, 4).tolist()}")
	return ChannelFsmc(edges=edges, stationary=stationary, transitions=transitions, gamma0=gamma0, fd_norm=fd_norm)


def jakes_generate(gamma0: float, fd_norm: float, n_periods: int, seed=None, n_oscillators: int = 64) -> np.ndarray:
	"""
	Channel power gains sampled once per management period.

	Sum of `n_oscillators` unit phasors with random arrival angles and phases;
	the complex gain has unit mean power, scaled to gamma0.
	"""
	if n_periods < 1:
		throw("n_periods must be at least 1")
	rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

	angles = rng.uniform(-np.pi, np.pi, n_oscillators)
	phases = rng.uniform(-np.pi, np.pi, n_oscillators)
	omega = 2 * np.pi * fd_norm * np.cos(angles)

	gains = np.empty(n_periods)
	for start in range(0, n_periods, GENERATOR_CHUNK):
		t = np.arange(start, min(start + GENERATOR_CHUNK, n_periods), dtype=float)
		field = np.exp(1j * (np.outer(t, omega) + phases)).sum(axis=1) / np.sqrt(n_oscillators)
		gains[start : start + len(t)] = gamma0 * np.abs(field) ** 2
	return gains


def quantize_gain(gamma, cfg) -> np.ndarray | int:
	"""Channel state i with G_i <= gamma < G_{i+1}."""
	edges = cfg.edges if hasattr(cfg, "edges") else np.asarray(cfg, dtype=float)
	state = np.clip(np.searchsorted(edges, gamma, side="right") - 1, 0, len(edges) - 2)
	return int(state) if np.ndim(state) == 0 else state


def sample_fsmc(fsmc: ChannelFsmc, n_periods: int, seed=None) -> np.ndarray:
	"""Channel state path drawn from the FSMC itself, started from its stationary law."""
	rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
	cum = np.cumsum(fsmc.transitions, axis=1)
	last = fsmc.n_states - 1
	states = np.empty(n_periods, dtype=int)
	states[0] = min(np.searchsorted(np.cumsum(fsmc.stationary), rng.random(), side="right"), last)
	draws = rng.random(n_periods)
	for t in range(1, n_periods):
		states[t] = min(np.searchsorted(cum[states[t - 1]], draws[t], side="right"), last)
	return states


def state_gains(states, fsmc: ChannelFsmc) -> np.ndarray:
	"""A representative power per state (conditional mean of the exponential law inside the bin)."""
	edges, g0 = fsmc.edges, fsmc.gamma0
	lo, hi = edges[:-1], edges[1:]
	with np.errstate(invalid="ignore"):
		hi_term = np.where(np.isfinite(hi), (hi + g0) * np.exp(-hi / g0), 0.0)
	means = ((lo + g0) * np.exp(-lo / g0) - hi_term) / fsmc.stationary
	return means[np.asarray(states)]

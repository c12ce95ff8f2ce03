"""
Online belief over the hidden solar state and belief-weighted action choice.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

import solar_harvest
from solar_harvest import throw
from solar_harvest.solar_harvest.solar_hmm import HmmParams, log_state_likelihoods

logger = solar_harvest.logger("belief_runtime")

MIXED_MODES = ("sample", "max", "oracle")


@dataclass
class Belief:
	zeta: np.ndarray
	last_obs: float | None = None
	resets: int = 0

	def validate(self) -> "Belief":
		if np.any(self.zeta < 0) or abs(self.zeta.sum() - 1) > 1e-12:
			throw("Belief must be a probability vector")
		return self


def initial_belief(hmm: HmmParams) -> Belief:
	return Belief(zeta=hmm.stationary.copy())


def _posterior(zeta: np.ndarray, log_lik: np.ndarray, transitions: np.ndarray) -> np.ndarray | None:
	"""Normalized posterior, or None when the observation has zero likelihood under every state."""
	with np.errstate(divide="ignore"):
		log_post = np.log(zeta @ transitions) + log_lik
		norm = logsumexp(log_post)
	if not np.isfinite(norm):
		return None
	post = np.exp(log_post - norm)
	return post / post.sum()


def belief_update(belief: Belief, x_t: float, hmm: HmmParams) -> Belief:
	"""zeta'_j proportional to sum_i zeta_i a_ij f_j(x_t), computed in the log domain."""
	zeta = _posterior(belief.zeta, log_state_likelihoods(x_t, hmm), hmm.transitions)
	if zeta is None:
		logger.warning(f"Observation {x_t} is impossible under the model; belief reset to the stationary law")
		return Belief(zeta=hmm.stationary.copy(), last_obs=x_t, resets=belief.resets + 1)
	return Belief(zeta=zeta, last_obs=x_t, resets=belief.resets)


def filter_beliefs(obs, hmm: HmmParams, belief: Belief | None = None, return_resets: bool = False):
	"""Belief after each observation, shape (T, n_states). Likelihoods are evaluated once for the whole trace."""
	belief = belief or initial_belief(hmm)
	obs = np.asarray(obs, dtype=float)
	log_lik = log_state_likelihoods(obs, hmm)
	out = np.empty((len(obs), hmm.n_states))
	zeta, resets = belief.zeta, 0
	for t in range(len(obs)):
		post = _posterior(zeta, log_lik[t], hmm.transitions)
		if post is None:
			post = hmm.stationary.copy()
			resets += 1
		out[t] = zeta = post

	if resets:
		logger.warning(f"Belief reset to the stationary law {resets} times over {len(obs)} observations")
	return (out, resets) if return_resets else out


def mixed_action(belief: Belief, policy, x: int, n: int, rng_seed=None, mode: str = "sample", true_state: int | None = None):
	"""
	Pick (w, m) from the per-solar-state policy.

	`sample` draws the solar state from the belief, `max` takes the most likely
	state and `oracle` uses `true_state`.
	"""
	if mode == "sample":
		rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
		z = int(min(np.searchsorted(np.cumsum(belief.zeta), rng.random(), side="right"), len(belief.zeta) - 1))
	elif mode == "max":
		z = int(np.argmax(belief.zeta))
	elif mode == "oracle":
		if true_state is None:
			throw("Oracle mode needs the true solar state")
		z = int(true_state)
	else:
		throw(f"Unknown belief mode {mode}, expected one of {MIXED_MODES}", field_path="simulation.belief_mode")
	return policy.action(z, x, n)

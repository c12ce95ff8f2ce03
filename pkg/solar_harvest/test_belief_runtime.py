import numpy as np
import pytest

from solar_harvest.exceptions import ValidationError
from solar_harvest.solar_harvest.belief_runtime import (
	Belief,
	belief_update,
	filter_beliefs,
	initial_belief,
	mixed_action,
)
from solar_harvest.solar_harvest.mdp_core import Policy
from solar_harvest.solar_harvest.solar_hmm import HmmParams, forward_backward, sample_observations


@pytest.fixture
def stationary_start(reference_hmm):
	return HmmParams(
		means=reference_hmm.means,
		variances=reference_hmm.variances,
		transitions=reference_hmm.transitions,
		initial=reference_hmm.stationary,
		stationary=reference_hmm.stationary,
	)


@pytest.fixture
def split_policy():
	"""Transmits at battery 1 in solar state 0, stays silent in state 1."""
	return Policy(
		actions=np.array([[[0, 1]], [[0, 0]]]),
		action_table=np.array([[0, 0], [1, 0]]),
		policy_class="onoff",
	)


def test_filter_matches_forward_pass(stationary_start):
	_, obs = sample_observations(stationary_start, 300, seed=9)
	beliefs = filter_beliefs(obs[0], stationary_start)

	log_alpha = forward_backward(obs[0], stationary_start).log_alpha
	expected = np.exp(log_alpha - log_alpha.max(axis=1, keepdims=True))
	expected /= expected.sum(axis=1, keepdims=True)
	assert np.max(np.abs(beliefs - expected)) <= 1e-10


def test_single_update_matches_batch(reference_hmm):
	_, obs = sample_observations(reference_hmm, 5, seed=1)
	belief = initial_belief(reference_hmm)
	for x in obs[0]:
		belief = belief_update(belief, x, reference_hmm)
	assert belief.zeta == pytest.approx(filter_beliefs(obs[0], reference_hmm)[-1], abs=1e-12)
	assert belief.last_obs == obs[0][-1]
	belief.validate()


def test_certain_state_stays_certain(reference_hmm):
	frozen = HmmParams(
		means=reference_hmm.means,
		variances=reference_hmm.variances,
		transitions=np.eye(4),
		initial=np.full(4, 0.25),
		stationary=np.full(4, 0.25),
	)
	start = Belief(zeta=np.array([0.0, 1.0, 0.0, 0.0]))
	beliefs = filter_beliefs([1.75e4, 9.38e4, 5e4], frozen, belief=start)
	assert np.all(beliefs == np.array([0.0, 1.0, 0.0, 0.0]))


def test_impossible_observation_resets(reference_hmm):
	beliefs, resets = filter_beliefs([4e4, np.inf, 4e4], reference_hmm, return_resets=True)
	assert resets == 1
	assert beliefs[1] == pytest.approx(reference_hmm.stationary)

	belief = belief_update(initial_belief(reference_hmm), np.inf, reference_hmm)
	assert belief.resets == 1


def test_filter_is_informative(reference_hmm):
	states, obs = sample_observations(reference_hmm, 10000, seed=4)
	beliefs = filter_beliefs(obs[0], reference_hmm)
	t = np.arange(states.shape[1])
	on_truth = beliefs[t, states[0]].mean()
	assert on_truth > reference_hmm.stationary[states[0]].mean()


def test_sampled_action_follows_belief(split_policy):
	belief = Belief(zeta=np.array([0.75, 0.25]))
	rng = np.random.default_rng(0)
	draws = [mixed_action(belief, split_policy, 0, 1, rng)[0] for _ in range(20000)]
	assert np.mean(draws) == pytest.approx(0.75, abs=0.02)


def test_max_and_oracle_modes(split_policy):
	belief = Belief(zeta=np.array([0.4, 0.6]))
	assert mixed_action(belief, split_policy, 0, 1, mode="max") == (0, 0)
	assert mixed_action(belief, split_policy, 0, 1, mode="oracle", true_state=0) == (1, 0)
	assert mixed_action(belief, split_policy, 0, 0, mode="oracle", true_state=0) == (0, 0)


def test_bad_modes_rejected(split_policy):
	belief = Belief(zeta=np.array([0.5, 0.5]))
	with pytest.raises(ValidationError) as e:
		mixed_action(belief, split_policy, 0, 1, mode="vote")
	assert e.value.field_path == "simulation.belief_mode"
	with pytest.raises(ValidationError):
		mixed_action(belief, split_policy, 0, 1, mode="oracle")

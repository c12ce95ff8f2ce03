import itertools

import numpy as np
import pytest

from solar_harvest.exceptions import (
	InsufficientDataError,
	ReducibleChainError,
	ValidationError,
	ZeroLikelihoodError,
)
from solar_harvest.solar_harvest.solar_hmm import (
	REFERENCE_15MIN,
	HmmParams,
	balance_residual,
	em_step,
	em_train,
	forward_backward,
	forward_backward_batch,
	load_model,
	resolve_model,
	sample_observations,
	save_model,
	state_likelihoods,
	stationary_distribution,
)


def random_params(rng, n):
	return HmmParams(
		means=np.sort(rng.normal(0, 3, n)),
		variances=rng.uniform(0.5, 2.0, n),
		transitions=rng.dirichlet(np.ones(n), size=n),
		initial=rng.dirichlet(np.ones(n)),
	)


def enumerate_paths(obs, params):
	"""Posteriors by summing over every hidden path."""
	n, T = params.n_states, len(obs)
	lik = state_likelihoods(obs, params)
	A = params.transitions
	gamma = np.zeros((T, n))
	xi = np.zeros((max(T - 1, 0), n, n))
	total = 0.0
	for path in itertools.product(range(n), repeat=T):
		p = params.initial[path[0]] * lik[0, path[0]]
		for t in range(1, T):
			p *= A[path[t - 1], path[t]] * lik[t, path[t]]
		total += p
		for t in range(T):
			gamma[t, path[t]] += p
		for t in range(T - 1):
			xi[t, path[t], path[t + 1]] += p
	return gamma / total, xi / total, np.log(total)


def test_forward_backward_matches_enumeration():
	rng = np.random.default_rng(0)
	for _ in range(100):
		n = int(rng.integers(1, 4))
		T = int(rng.integers(1, 7))
		params = random_params(rng, n)
		obs = rng.normal(0, 3, T)

		res = forward_backward(obs, params)
		gamma, xi, log_lik = enumerate_paths(obs, params)

		assert np.max(np.abs(res.gamma - gamma)) <= 1e-9
		if T > 1:
			assert np.max(np.abs(res.xi - xi)) <= 1e-9
		assert res.log_likelihood == pytest.approx(log_lik, rel=1e-9, abs=1e-9)


def test_batch_handles_mixed_lengths(reference_hmm):
	_, obs = sample_observations(reference_hmm, 30, seed=2, n_sequences=3)
	obs_set = [obs[0], obs[1][:12], obs[2][:30]]
	batch = forward_backward_batch(obs_set, reference_hmm)
	for seq, res in zip(obs_set, batch, strict=True):
		single = forward_backward(seq, reference_hmm)
		assert res.gamma.shape == (len(seq), 4)
		assert res.log_likelihood == pytest.approx(single.log_likelihood, rel=1e-12)


def test_posteriors_are_distributions(reference_hmm):
	_, obs = sample_observations(reference_hmm, 50, seed=4)
	res = forward_backward(obs[0], reference_hmm)
	assert np.allclose(res.gamma.sum(axis=1), 1.0, atol=1e-12)
	assert np.allclose(res.xi.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_zero_likelihood_reports_time(reference_hmm):
	obs = np.array([2e4, 3e4, np.nan, 4e4])
	with pytest.raises(ZeroLikelihoodError) as e:
		forward_backward(obs, reference_hmm)
	assert e.value.t == 2


def test_stationary_examples():
	assert stationary_distribution(np.full((3, 3), 1 / 3)) == pytest.approx(np.full(3, 1 / 3), abs=1e-12)
	two_state = np.array([[0.9, 0.1], [0.3, 0.7]])
	assert stationary_distribution(two_state) == pytest.approx([0.75, 0.25], abs=1e-12)


def test_reducible_chain_rejected():
	with pytest.raises(ReducibleChainError) as e:
		stationary_distribution(np.eye(2))
	assert len(e.value.classes) == 2


def test_transient_states_get_zero_mass():
	A = np.array([[0.5, 0.5, 0.0], [0.0, 0.2, 0.8], [0.0, 0.6, 0.4]])
	v = stationary_distribution(A)
	assert v[0] == pytest.approx(0.0, abs=1e-12)
	assert balance_residual(A, v) <= 1e-10


def test_reference_models(reference_hmm):
	assert reference_hmm.stationary == pytest.approx([0.16, 0.36, 0.21, 0.27], abs=0.05)
	assert balance_residual(reference_hmm.transitions, reference_hmm.stationary) <= 1e-10
	assert np.all(np.diff(reference_hmm.means) > 0)
	REFERENCE_15MIN.validate()


def test_sort_by_mean_permutes_everything():
	params = HmmParams(
		means=[5.0, 1.0],
		variances=[2.0, 1.0],
		transitions=[[0.9, 0.1], [0.3, 0.7]],
		initial=[0.2, 0.8],
	)
	ordered = params.sort_by_mean()
	assert ordered.means.tolist() == [1.0, 5.0]
	assert ordered.variances.tolist() == [1.0, 2.0]
	assert ordered.transitions.tolist() == [[0.7, 0.3], [0.1, 0.9]]
	assert ordered.initial.tolist() == [0.8, 0.2]
	assert ordered.stationary == pytest.approx([0.25, 0.75])


def test_unsorted_model_fails_validation():
	params = HmmParams(means=[5.0, 1.0], variances=[1.0, 1.0], transitions=[[0.5, 0.5], [0.5, 0.5]], initial=[0.5, 0.5])
	with pytest.raises(ValidationError):
		params.validate()


def test_em_is_monotone(reference_hmm):
	_, obs = sample_observations(reference_hmm, 200, seed=3, n_sequences=10)
	_, report = em_train(list(obs), n_states=4, max_iters=40, ll_tol=1e-14)

	trace = np.array(report.ll_trace)
	assert len(trace) >= 2
	slack = 1e-8 + 1e-12 * np.abs(trace[:-1])
	assert np.all(np.diff(trace) >= -slack)


def test_em_step_keeps_probabilities_valid(reference_hmm):
	_, obs = sample_observations(reference_hmm, 100, seed=5, n_sequences=4)
	new, log_lik = em_step(list(obs), reference_hmm)
	new.validate()
	assert np.isfinite(log_lik)


def test_em_needs_enough_data():
	with pytest.raises(InsufficientDataError):
		em_train([np.arange(10.0)], n_states=4)


def test_constant_data_hits_variance_floor():
	obs = [np.full(60, 100.0)]
	params, report = em_train(obs, n_states=1, max_iters=5)
	assert params.means[0] == pytest.approx(100.0)
	assert params.variances[0] == pytest.approx(report.variance_floor)
	assert params.variances[0] > 0


def test_model_document_round_trip(tmp_path, reference_hmm):
	path = tmp_path / "model.json"
	save_model(reference_hmm, str(path))
	again = load_model(str(path))
	assert np.array_equal(again.means, reference_hmm.means)
	assert np.array_equal(again.transitions, reference_hmm.transitions)
	assert np.array_equal(again.stationary, reference_hmm.stationary)


def test_resolve_model_names(reference_hmm, tmp_path):
	assert resolve_model("reference-5min") is reference_hmm
	with pytest.raises(ValidationError):
		resolve_model(str(tmp_path / "missing.json"))


@pytest.mark.slow
def test_em_recovers_generator(reference_hmm):
	states, obs = sample_observations(reference_hmm, 1000, seed=11, n_sequences=10)
	params, report = em_train(list(obs), n_states=4)

	assert report.iterations > 1
	assert params.means == pytest.approx(reference_hmm.means, rel=0.05)
	assert params.variances == pytest.approx(reference_hmm.variances, rel=0.2)
	assert np.diag(params.transitions) == pytest.approx(np.diag(reference_hmm.transitions), abs=0.02)

	occupancy = np.bincount(states.ravel(), minlength=4) / states.size
	assert 0.5 * np.abs(params.stationary - occupancy).sum() <= 0.05
	assert 0.5 * np.abs(params.stationary - reference_hmm.stationary).sum() <= 0.1

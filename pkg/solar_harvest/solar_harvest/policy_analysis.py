"""
Structure and performance of solved on-off policies.

Matrices that describe the chain under a policy are reported in column
convention (entry [p, q] is the probability of moving from q to p); everything
else in the package is row convention.
"""

from dataclasses import dataclass, field

import numpy as np

import solar_harvest
from solar_harvest import throw
from solar_harvest.exceptions import PmfSupportError
from solar_harvest.solar_harvest.mdp_core import MdpModel, Policy, ValueFunction, ber_bound, packet_success
from solar_harvest.solar_harvest.solar_hmm import stationary_distribution

logger = solar_harvest.logger("policy_analysis")

SUPPORT_TOL = 1e-9


@dataclass
class ThresholdAnalysis:
	thresholds: np.ndarray
	theta: np.ndarray
	is_threshold: np.ndarray
	theta_consistent: np.ndarray
	value_monotone: np.ndarray
	deficiency_regions: dict = field(default_factory=dict)

	@property
	def all_threshold(self) -> bool:
		return bool(self.is_threshold.all())

	def as_dict(self) -> dict:
		return {
			"thresholds": self.thresholds.tolist(),
			"is_threshold": self.is_threshold.tolist(),
			"theta_consistent": self.theta_consistent.tolist(),
			"value_monotone": self.value_monotone.tolist(),
			"deficiency_regions": {f"{z},{x}": list(region) for (z, x), region in self.deficiency_regions.items()},
		}


@dataclass
class StationaryAnalysis:
	nu: np.ndarray
	pi_matrices: np.ndarray
	phi: np.ndarray
	residual: float

	def battery_marginal(self) -> np.ndarray:
		return self.nu.sum(axis=(0, 1))


def _require_onoff(model: MdpModel):
	if model.policy_class != "onoff":
		throw("Threshold analysis applies to on-off policies only", field_path="solver.policy_class")


def value_monotone(v: np.ndarray, tol: float = 1e-9) -> np.ndarray:
	"""Per (z, x): V(z, x, y - 1) <= V(z, x, y) for every y >= 1."""
	scale = max(1.0, float(np.max(np.abs(v))))
	return np.all(np.diff(v, axis=2) >= -tol * scale, axis=2)


def check_threshold(policy: Policy, v: ValueFunction, model: MdpModel) -> ThresholdAnalysis:
	"""
	Read thresholds off the on-off action pattern.

	kappa[z, x] is the highest battery level at which the policy stays silent;
	Theta = Q(on) - Q(off) from the final backup, -inf at the empty battery.
	"""
	_require_onoff(model)
	on = policy.power
	n_b = model.dims[2]

	with np.errstate(invalid="ignore"):
		theta = v.q[..., 1] - v.q[..., 0]

	steps = np.diff(on[..., 1:], axis=2) if n_b > 2 else np.zeros(on.shape[:2] + (0,), dtype=int)
	is_threshold = (on[..., 0] == 0) & np.all(steps >= 0, axis=2)

	silent = on == 0
	levels = np.arange(n_b)
	thresholds = np.where(silent, levels, -1).max(axis=2)
	thresholds = np.where(is_threshold, thresholds, -1)

	consistent = np.zeros(thresholds.shape, dtype=bool)
	for (z, x), kappa in np.ndenumerate(thresholds):
		if kappa < 0:
			continue
		ok = True
		if kappa >= 1:
			ok &= theta[z, x, kappa] <= 0
		if kappa + 1 < n_b:
			ok &= theta[z, x, kappa + 1] > 0
		consistent[z, x] = ok

	monotone = value_monotone(v.v)
	if not monotone.all():
		logger.warning(f"Value not monotone in battery for {int((~monotone).sum())} (z, x) pairs")
	if not is_threshold.all():
		logger.info(f"{int((~is_threshold).sum())} (z, x) pairs do not follow a threshold rule")

	return ThresholdAnalysis(
		thresholds=thresholds,
		theta=theta,
		is_threshold=is_threshold,
		theta_consistent=consistent,
		value_monotone=monotone,
	)


def xi_difference(v: np.ndarray, model: MdpModel) -> np.ndarray:
	"""Xi(z, x, y): expected gain of one more stored quantum, averaged over the next solar and channel states."""
	n_b = model.dims[2]
	upper = np.minimum(np.arange(n_b) + 1, n_b - 1)
	gain = v[:, :, upper] - v
	return np.einsum("zj,xl,jly->zxy", model.solar_trans, model.channel_trans, gain)


def deficiency_region(z: int, x: int, kappa: int, v, model: MdpModel, r1: float | None = None) -> tuple[float, float]:
	"""
	Interval of P(Q = 0 | S_H = z) for which kappa can be the optimal threshold at (z, x).

	`r1` overrides the on-reward at channel state x.
	"""
	_require_onoff(model)
	outside = model.quanta_pmf[:, 2:].sum(axis=1)
	if np.any(outside > SUPPORT_TOL):
		throw(
			f"Quanta PMF puts mass {outside.max():.3e} on two or more quanta; the region needs support in {{0, 1}}",
			PmfSupportError,
		)

	values = v.v if isinstance(v, ValueFunction) else np.asarray(v)
	discount = v.discount if isinstance(v, ValueFunction) else model.metadata.get("discount")
	if discount is None:
		throw("A discount factor is needed; pass the ValueFunction")
	n_b = model.dims[2]
	if not 0 <= kappa <= n_b - 1:
		throw(f"Threshold {kappa} outside 0..{n_b - 1}")

	if r1 is None:
		r1 = float(model.reward[x, 1])
	xi = xi_difference(values, model)[z, x]

	def phi(n):
		upper = xi[kappa + n - 1] - xi[kappa + n]
		lower_term = r1 / discount - xi[kappa + n]
		with np.errstate(divide="ignore", invalid="ignore"):
			return float(np.divide(lower_term, upper))

	if kappa == 0:
		region = (0.0, phi(1))
	elif kappa == n_b - 1:
		region = (phi(0), 1.0)
	else:
		region = (phi(0), phi(1))
	return tuple(float(np.clip(b, 0.0, 1.0)) if np.isfinite(b) else (1.0 if b > 0 else 0.0) for b in region)


def stationary_under_policy(policy: Policy, model: MdpModel) -> StationaryAnalysis:
	"""Stationary law of (z, x, n) under a deterministic policy, solved on the full chain."""
	transition = model.transition_matrix(policy.actions)
	nu = stationary_distribution(transition)
	phi = transition.T
	residual = float(np.max(np.abs(phi @ nu - nu)))
	pi_matrices = np.swapaxes(model.policy_battery(policy.actions), -1, -2)
	logger.debug(f"Stationary law solved on {len(nu)} states, residual {residual:.3e}")
	return StationaryAnalysis(nu=nu.reshape(model.dims), pi_matrices=pi_matrices, phi=phi, residual=residual)


def expected_net_bit_rate(stationary: StationaryAnalysis, policy: Policy, model: MdpModel) -> float:
	"""Long-run delivered bits per second under the policy."""
	return float(np.sum(stationary.nu * model.policy_rewards(policy.actions)))


def duty_cycle(stationary: StationaryAnalysis, policy: Policy) -> float:
	return float(np.sum(stationary.nu * (policy.power > 0)))


def rate_upper_bound(q_bar: float, radio, channel, m: int) -> float:
	"""min(q_bar, 1) times the basic-power rate in the best channel state."""
	if q_bar < 0:
		throw("Harvest rate must be non-negative")
	top = len(channel.edges) - 2
	eta = ber_bound(top, 1, m, radio, channel)
	bits = radio.modulations[m].bits_per_symbol * radio.packet_symbols
	return min(q_bar, 1.0) * bits / radio.packet_duration * packet_success(eta, bits)


def rate_upper_bound_for(model: MdpModel, q_bar: float) -> float:
	"""Same bound read from a built on-off model's reward table."""
	_require_onoff(model)
	return min(max(q_bar, 0.0), 1.0) * float(model.reward[-1, 1])


def harvest_rate_for(model: MdpModel, solar_stationary) -> float:
	return float(np.asarray(solar_stationary) @ (model.quanta_pmf @ np.arange(model.quanta_pmf.shape[1])))


def analysis_report(policy: Policy, value: ValueFunction, model: MdpModel, solar_stationary, config_echo: dict | None = None) -> dict:
	"""Thresholds, stationary summary, rate and bound as one document."""
	threshold = check_threshold(policy, value, model)
	stationary = stationary_under_policy(policy, model)
	rate = expected_net_bit_rate(stationary, policy, model)
	q_bar = harvest_rate_for(model, solar_stationary)
	bound = rate_upper_bound_for(model, q_bar)

	regions = {}
	if np.all(model.quanta_pmf[:, 2:].sum(axis=1) <= SUPPORT_TOL):
		for (z, x), kappa in np.ndenumerate(threshold.thresholds):
			if kappa >= 0:
				regions[(z, x)] = deficiency_region(z, x, int(kappa), value, model)
	threshold.deficiency_regions = regions

	if rate > bound * (1 + 1e-9):
		logger.error(f"Expected rate {rate:.6g} exceeds the harvest bound {bound:.6g}")

	return {
		"status": "success",
		"version": solar_harvest.__version__,
		"threshold": threshold.as_dict(),
		"stationary": {
			"battery_marginal": stationary.battery_marginal().tolist(),
			"residual": stationary.residual,
			"duty_cycle": duty_cycle(stationary, policy),
		},
		"expected_rate": rate,
		"harvest_rate": q_bar,
		"rate_bound": bound,
		"config": config_echo or {},
	}

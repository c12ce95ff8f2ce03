"""
Scenario wiring shared by the CLI and the tests: config -> solar model,
quanta PMF, channel chain, MDP, solved policy, simulation setups.

Usage:
	scenario = build_scenario(load_run_config("onoff-demo"))
	trace = run_episode(simulation_setup(scenario))
"""

from dataclasses import dataclass, replace

import solar_harvest
from solar_harvest.solar_harvest.channel_model import build_fsmc
from solar_harvest.solar_harvest.energy_model import quanta_pmf_gaussian
from solar_harvest.solar_harvest.mdp_core import build_mdp, value_iteration
from solar_harvest.solar_harvest.simulator import SimSetup
from solar_harvest.solar_harvest.solar_hmm import resolve_model

logger = solar_harvest.logger("pipeline")

SOLVED_POLICIES = ("onoff", "composite")
BASELINE_POLICIES = ("myopic1", "myopic2", "ttfr")


@dataclass
class Scenario:
	config: object
	hmm: object
	pmf: object
	fsmc: object
	model: object = None
	value: object = None
	policy: object = None

	def echo(self) -> dict:
		return {**self.config.as_dict(), "config_hash": self.config.config_hash(), "version": solar_harvest.__version__}


def build_scenario(config, hmm=None, solve: bool = True) -> Scenario:
	hmm = hmm or resolve_model(config.model)
	pmf = quanta_pmf_gaussian(hmm, config.energy)
	fsmc = build_fsmc(config.channel)
	scenario = Scenario(config=config, hmm=hmm, pmf=pmf, fsmc=fsmc)
	if not solve:
		return scenario

	solver = config.solver
	scenario.model = build_mdp(
		hmm,
		pmf,
		fsmc,
		config.radio,
		n_battery=solver.n_battery,
		policy_class=solver.policy_class,
		modulation=solver.modulation,
		n_power=solver.n_power or None,
	)
	scenario.model.metadata["discount"] = solver.discount
	scenario.value, scenario.policy = value_iteration(scenario.model, solver)
	return scenario


def simulation_setup(scenario: Scenario, recorded=None, label: dict | None = None) -> SimSetup:
	config = scenario.config
	return SimSetup(
		sim=config.simulation,
		radio=config.radio,
		energy=config.energy,
		channel=config.channel,
		n_battery=config.solver.n_battery,
		hmm=scenario.hmm,
		fsmc=scenario.fsmc,
		pmf=scenario.pmf,
		policy=scenario.policy,
		onoff_modulation=config.radio.modulation_index(config.solver.modulation),
		recorded=recorded,
		label=label or {},
	)


def policy_config(config, policy: str):
	"""Config for one policy name: solved classes set the solver, baselines set the simulator."""
	if policy in SOLVED_POLICIES:
		return config.replace({"solver.policy_class": policy, "simulation.policy": "solved"})
	if policy in BASELINE_POLICIES:
		return config.replace({"simulation.policy": policy})
	solar_harvest.throw(f"Unknown policy {policy}, expected one of {SOLVED_POLICIES + BASELINE_POLICIES}", field_path="simulation.policy")


def sweep_setups(config, key: str | None = None, values=None, policies=("onoff",), hmm=None, recorded=None) -> list[SimSetup]:
	"""One setup per (sweep value, policy), value-major. Baselines share one unsolved scenario per value."""
	hmm = hmm or resolve_model(config.model)
	grid = values if key else [None]
	setups = []
	for value in grid:
		point = config.replace({key: value}) if key else config
		unsolved = None
		for policy in policies:
			run = policy_config(point, policy)
			if policy in SOLVED_POLICIES:
				scenario = build_scenario(run, hmm=hmm)
			else:
				unsolved = unsolved or build_scenario(run, hmm=hmm, solve=False)
				scenario = replace(unsolved, config=run)
			label = {"policy": policy}
			if key:
				label[key] = value
			setups.append(simulation_setup(scenario, recorded=recorded, label=label))

	logger.info(f"Prepared {len(setups)} simulation setups")
	return setups

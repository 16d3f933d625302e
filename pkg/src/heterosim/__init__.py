"""Simulator for heterogeneous robot teams: aerial relays that keep ground sensors,
manipulators and foragers connected, plus an aerial-assisted foraging model."""

from .config import ScenarioConfig, load_scenario, scenario_from_dict
from .engine import ExplorationSim, run

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "load_scenario", "scenario_from_dict", "ExplorationSim", "run", "__version__"]

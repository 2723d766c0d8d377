"""Scenario files, the tick scheduler, reports, export and the command line."""

from .config import ScenarioConfig, load, loads, scenario_hash
from .export import export_bag
from .report import RunReport
from .runner import RunResult, Simulation, replay, run

__all__ = ["ScenarioConfig", "load", "loads", "scenario_hash", "export_bag", "RunReport",
           "RunResult", "Simulation", "replay", "run"]

"""Trail sensor network simulator for counting unique park users."""
from .config import ScenarioConfig, load_scenario, parse_scenario
from .engine import RunResult, compare_energy, replicate, run

__all__ = ["ScenarioConfig", "load_scenario", "parse_scenario", "run", "replicate", "compare_energy", "RunResult"]
__version__ = "0.1.0"

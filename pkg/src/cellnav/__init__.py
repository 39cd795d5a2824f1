"""cellnav: a deterministic simulator for an active cell-grid
environment that routes map-less robots.

Cells form a dynamic 4-connected grid, maintain self-stabilizing
distance-vector routing tables by local broadcast, and guide robots
hop by hop through a reservation protocol that keeps them collision
free. The package also ships the stochastic-failure evaluation
harness, a scenario library, a CLI, and a WebSocket gateway for the
interactive web console.
"""

from .engine import Engine, EngineConfig, RunResult, SafetyViolation, replay, run
from .experiments import ExperimentPlan, mann_whitney_u, run_plan
from .scenarios import (Scenario, demo_mapf, demo_parking, demo_reconfig,
                        list_builtin, load_builtin, parse_scenario)
from .topology import Grid, parse_field

__version__ = "0.1.0"

__all__ = [
    "Engine", "EngineConfig", "RunResult", "SafetyViolation", "run", "replay",
    "ExperimentPlan", "mann_whitney_u", "run_plan",
    "Scenario", "parse_scenario", "load_builtin", "list_builtin",
    "demo_reconfig", "demo_parking", "demo_mapf",
    "Grid", "parse_field",
    "__version__",
]

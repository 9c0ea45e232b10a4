"""Prioritized admission control and probabilistic resource reservation for network slices."""
from .engine import JPR, SPR, ScenarioConfig, SimulationResult, generate_requests, run
from .infra import InfrastructureNetwork, build_fat_tree, load_topology
from .policy import JUST_IN_TIME, PRIORITIZED, PolicyParams
from .scenario import ConfigError, Scenario, load_scenario
from .slices import PriorityClass, SliceRequest, SliceType, builtin_slice_catalog, make_request

__all__ = [
    "ConfigError", "InfrastructureNetwork", "JPR", "JUST_IN_TIME", "PRIORITIZED", "PolicyParams", "PriorityClass",
    "SPR", "Scenario", "ScenarioConfig", "SimulationResult", "SliceRequest", "SliceType", "build_fat_tree",
    "builtin_slice_catalog", "generate_requests", "load_scenario", "load_topology", "make_request", "run",
]

"""Deterministic adversarial simulation of blocklace replicas."""

from .engine import Simulator, cordial_targets, node_key, run
from .report import (
    SimResult,
    check_byzantine_convergence,
    check_eventual_visibility,
    check_finite_harm,
    check_unbounded_harm,
)
from .scenario import BEHAVIORS, NodeSpec, Scenario, ScenarioError, from_dict, load

__all__ = [
    "BEHAVIORS", "NodeSpec", "Scenario", "ScenarioError", "SimResult", "Simulator",
    "check_byzantine_convergence", "check_eventual_visibility", "check_finite_harm",
    "check_unbounded_harm", "cordial_targets", "from_dict", "load", "node_key", "run",
]

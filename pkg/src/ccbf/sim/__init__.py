"""Scenario loading, the simulation engine, metrics and log writers."""
from .engine import RunResult, StepLog, forward_invariance_margins, joint_constraint_set, run, summarize
from .sampling import sample_safety
from .scenario import ScenarioConfig, ScenarioError, apply_overrides, load_scenario

__all__ = [
    "RunResult", "StepLog", "ScenarioConfig", "ScenarioError", "apply_overrides", "forward_invariance_margins",
    "joint_constraint_set", "load_scenario", "run", "sample_safety", "summarize",
]

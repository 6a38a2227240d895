"""Flat-informed RRT* trajectory planning for a 3D gantry crane."""

from .crane import CraneParams, CraneState, ControlInput, FeasibilityBounds
from .lqmt import FlatState, SteeringBounds, SteeringSolution, SteeringWeights, steer
from .planner import PlannerConfig, PlanResult, TrajectoryTree, plan, replan
from .scenario import Scenario
from .sim import SimResult, validate_flat_trajectory
from .world import Aabb, World, Workspace

__version__ = "0.1.0"

__all__ = [
    "Aabb", "ControlInput", "CraneParams", "CraneState", "FeasibilityBounds", "FlatState",
    "PlanResult", "PlannerConfig", "Scenario", "SimResult", "SteeringBounds", "SteeringSolution",
    "SteeringWeights", "TrajectoryTree", "Workspace", "World", "plan", "replan", "steer",
    "validate_flat_trajectory",
]

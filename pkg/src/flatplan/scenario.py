"""Scenario files: obstacles, workspace, endpoints, crane parameters, bounds.

Scenarios are JSON documents whose field names carry their units.  Two
bundled scenarios (``scenario1``, ``scenario2``) reproduce the laboratory
obstacle layouts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Union

import jsonschema

from .crane import CraneParams, FeasibilityBounds
from .lqmt import FlatState, SteeringWeights
from .world import Aabb, World, Workspace

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}


def _vec(n):
    return {"type": "array", "items": {"type": "number"}, "minItems": n, "maxItems": n}


_STATE = {
    "type": "object",
    "properties": {
        "position_m": _VEC3,
        "velocity_m_s": _VEC3,
        "acceleration_m_s2": _VEC3,
        "jerk_m_s3": _VEC3,
    },
    "required": ["position_m"],
    "additionalProperties": False,
}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "workspace": {
            "type": "object",
            "properties": {"lo_m": _VEC3, "hi_m": _VEC3},
            "required": ["lo_m", "hi_m"],
            "additionalProperties": False,
        },
        "obstacles": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"origin_m": _VEC3, "size_m": _VEC3},
                "required": ["origin_m", "size_m"],
                "additionalProperties": False,
            },
        },
        "start": _STATE,
        "target": _STATE,
        "crane": {
            "type": "object",
            "properties": {
                "m_payload_kg": {"type": "number", "exclusiveMinimum": 0},
                "m_trolley_kg": {"type": "number", "exclusiveMinimum": 0},
                "m_bridge_kg": {"type": "number", "exclusiveMinimum": 0},
                "h0_m": {"type": "number", "exclusiveMinimum": 0},
                "gravity_m_s2": {"type": "number", "exclusiveMinimum": 0},
                "payload_radius_m": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "bounds": {
            "type": "object",
            "properties": {
                "z_lo": _vec(10),
                "z_hi": _vec(10),
                "u_lo_N": _VEC3,
                "u_hi_N": _VEC3,
                "sway_max_rad": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "weights_r": _VEC3,
        "resolution_m": {"type": "number", "exclusiveMinimum": 0},
        "margin_m": {"type": "number", "minimum": 0},
    },
    "required": ["workspace", "obstacles", "start", "target"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class Scenario:
    workspace: Workspace
    obstacles: List[Aabb]
    start: FlatState
    target: FlatState
    crane: CraneParams = field(default_factory=CraneParams)
    bounds: FeasibilityBounds = field(default_factory=FeasibilityBounds)
    weights: SteeringWeights = field(default_factory=SteeringWeights)
    resolution: float = 0.01
    margin: float = 0.02
    name: str = ""

    def __post_init__(self):
        for label, x in (("start", self.start), ("target", self.target)):
            if not self.workspace.contains(x.p)[0]:
                raise ValueError(f"{label} position {x.p.tolist()} lies outside the workspace")

    def build_world(self) -> World:
        return World(self.obstacles, self.workspace, self.resolution, self.margin)

    def with_target(self, target: FlatState) -> "Scenario":
        return Scenario(self.workspace, list(self.obstacles), self.start, target, self.crane,
                        self.bounds, self.weights, self.resolution, self.margin, self.name)


def _state_to_dict(x: FlatState) -> Dict[str, List[float]]:
    return {
        "position_m": x.p.tolist(),
        "velocity_m_s": x.v.tolist(),
        "acceleration_m_s2": x.a.tolist(),
        "jerk_m_s3": x.j.tolist(),
    }


def _state_from_dict(d) -> FlatState:
    zero = [0.0, 0.0, 0.0]
    return FlatState.from_derivatives(
        d["position_m"],
        d.get("velocity_m_s", zero),
        d.get("acceleration_m_s2", zero),
        d.get("jerk_m_s3", zero),
    )


def to_dict(sc: Scenario) -> Dict[str, Any]:
    c, b = sc.crane, sc.bounds
    return {
        "name": sc.name,
        "workspace": {"lo_m": list(sc.workspace.lo), "hi_m": list(sc.workspace.hi)},
        "obstacles": [{"origin_m": list(o.origin), "size_m": list(o.size)} for o in sc.obstacles],
        "start": _state_to_dict(sc.start),
        "target": _state_to_dict(sc.target),
        "crane": {
            "m_payload_kg": c.m_payload,
            "m_trolley_kg": c.m_trolley,
            "m_bridge_kg": c.m_bridge,
            "h0_m": c.h0,
            "gravity_m_s2": c.gravity,
            "payload_radius_m": c.payload_radius,
        },
        "bounds": {
            "z_lo": list(b.z_lo),
            "z_hi": list(b.z_hi),
            "u_lo_N": list(b.u_lo),
            "u_hi_N": list(b.u_hi),
            "sway_max_rad": b.sway_max,
        },
        "weights_r": list(sc.weights.r),
        "resolution_m": sc.resolution,
        "margin_m": sc.margin,
    }


def from_dict(d: Dict[str, Any]) -> Scenario:
    jsonschema.validate(d, SCHEMA)
    cd = d.get("crane", {})
    defaults = CraneParams()
    crane = CraneParams(
        m_payload=cd.get("m_payload_kg", defaults.m_payload),
        m_trolley=cd.get("m_trolley_kg", defaults.m_trolley),
        m_bridge=cd.get("m_bridge_kg", defaults.m_bridge),
        h0=cd.get("h0_m", defaults.h0),
        gravity=cd.get("gravity_m_s2", defaults.gravity),
        payload_radius=cd.get("payload_radius_m", defaults.payload_radius),
    )
    bd = d.get("bounds", {})
    fb = FeasibilityBounds()
    bounds = FeasibilityBounds(
        z_lo=tuple(bd.get("z_lo", fb.z_lo)),
        z_hi=tuple(bd.get("z_hi", fb.z_hi)),
        u_lo=tuple(bd.get("u_lo_N", fb.u_lo)),
        u_hi=tuple(bd.get("u_hi_N", fb.u_hi)),
        sway_max=bd.get("sway_max_rad", fb.sway_max),
    )
    return Scenario(
        workspace=Workspace(d["workspace"]["lo_m"], d["workspace"]["hi_m"]),
        obstacles=[Aabb(o["origin_m"], o["size_m"]) for o in d["obstacles"]],
        start=_state_from_dict(d["start"]),
        target=_state_from_dict(d["target"]),
        crane=crane,
        bounds=bounds,
        weights=SteeringWeights(tuple(d.get("weights_r", SteeringWeights().r))),
        resolution=float(d.get("resolution_m", 0.01)),
        margin=float(d.get("margin_m", 0.02)),
        name=d.get("name", ""),
    )


BUNDLED = ("scenario1", "scenario2")


def load(path: Union[str, Path]) -> Scenario:
    """Load a scenario file; a bare bundled name such as ``scenario1`` also works."""
    if str(path) in BUNDLED and not Path(path).exists():
        return bundled(str(path))
    with open(path, "r", encoding="utf-8") as fh:
        return from_dict(json.load(fh))


def dumps(sc: Scenario) -> str:
    return json.dumps(to_dict(sc), indent=2)


def save(sc: Scenario, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(sc) + "\n", encoding="utf-8")


def bundled(name: str) -> Scenario:
    """Load a bundled scenario by name (``scenario1`` or ``scenario2``)."""
    ref = resources.files("flatplan.data").joinpath(f"{name}.json")
    return from_dict(json.loads(ref.read_text(encoding="utf-8")))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("flatplan.data").joinpath(f"{name}.json")))

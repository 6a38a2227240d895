"""Fixed-step RK4 simulation of the crane under flatness-based feedforward."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numba
import numpy as np

from .crane import (
    INPUT_NAMES,
    STATE_NAMES,
    ControlInput,
    CraneParams,
    CraneState,
    flat_inputs_batch,
    flat_states_batch,
    model_constants,
)
from .crane import _accel_kernel
from .errors import NonPositiveStep, RopeInverted, SingularMass
from .lqmt import SteeringSolution


@dataclass
class SimResult:
    """Uniform time grid with simulated states and the applied inputs.

    ``predicted`` holds the flatness-predicted states when the run came from
    a flat trajectory; ``max_state_error`` is then the largest absolute
    deviation over all steps and components (NaN otherwise).
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    predicted: Optional[np.ndarray] = None
    max_state_error: float = float("nan")

    def __post_init__(self):
        n = self.times.shape[0]
        if self.states.shape != (n, 10) or self.inputs.shape != (n, 3):
            raise ValueError("inconsistent SimResult lengths")
        if self.predicted is not None and self.predicted.shape != (n, 10):
            raise ValueError("inconsistent predicted-state length")

    def state(self, k: int) -> CraneState:
        return CraneState.from_z(self.states[k])

    def input(self, k: int) -> ControlInput:
        return ControlInput(self.inputs[k])

    @property
    def errors(self) -> np.ndarray:
        if self.predicted is None:
            return np.full(self.times.shape[0], np.nan)
        return np.max(np.abs(self.states - self.predicted), axis=1)

    def to_csv(self, path: Union[str, Path]) -> None:
        header = ["t"] + list(STATE_NAMES) + list(INPUT_NAMES) + [f"{n}_pred" for n in STATE_NAMES] + ["error"]
        pred = self.predicted if self.predicted is not None else np.full_like(self.states, np.nan)
        rows = np.column_stack([self.times, self.states, self.inputs, pred, self.errors])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) for v in r])


@numba.njit(cache=True)
def _rk4_kernel(z0, h, stage_u, consts):
    """RK4 over segments of length h[k]; stage_u[k] holds inputs at start, midpoint and end."""
    m_load, m_trolley, m_bridge, h0, grav = consts
    n = h.size
    Z = np.empty((n + 1, 10))
    Z[0] = z0
    z = z0.copy()
    ks = np.empty((4, 10))
    for k in range(n):
        dt = h[k]
        for s in range(4):
            if s == 0:
                zs = z
                u = stage_u[k, 0]
            elif s == 3:
                zs = z + dt * ks[2]
                u = stage_u[k, 2]
            else:
                zs = z + 0.5 * dt * ks[s - 1]
                u = stage_u[k, 1]
            qdd, ok = _accel_kernel(zs[:5], zs[5:], u, m_load, m_trolley, m_bridge, h0, grav)
            if not ok:
                return Z[: k + 1], False
            ks[s, :5] = zs[5:]
            ks[s, 5:] = qdd
        z = z + dt / 6.0 * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3])
        Z[k + 1] = z
    return Z, True


def _rk4(z0: np.ndarray, h: np.ndarray, stage_u: np.ndarray, params: CraneParams) -> np.ndarray:
    Z, ok = _rk4_kernel(np.asarray(z0, dtype=float), np.asarray(h, dtype=float),
                        np.ascontiguousarray(stage_u, dtype=float), model_constants(params))
    if not ok:
        raise SingularMass("mass matrix lost positive definiteness during integration")
    return Z


def _grid(dt: float, T: float) -> int:
    if not dt > 0:
        raise NonPositiveStep(f"dt must be positive, got {dt}")
    if T < dt:
        raise ValueError(f"horizon {T} shorter than one step {dt}")
    return int(round(T / dt))


def integrate(z0: CraneState, input_fn: Callable[[float], Union[ControlInput, np.ndarray]], params: CraneParams,
              dt: float, T: float) -> SimResult:
    """Integrate the crane dynamics from ``z0`` over ``round(T / dt)`` RK4 steps."""
    n = _grid(dt, T)
    half = 0.5 * dt * np.arange(2 * n + 1)
    U = np.array([np.asarray(getattr(u, "u", u), dtype=float) for u in map(input_fn, half)])
    stage_u = np.stack([U[0:-1:2], U[1::2], U[2::2]], axis=1)
    Z = _rk4(z0.z, np.full(n, dt), stage_u, params)
    return SimResult(half[::2].copy(), Z, U[::2].copy())


class FlatTrajectory:
    """Concatenated LQMT edges evaluated on a global time axis."""

    def __init__(self, edges: Sequence[SteeringSolution]):
        if len(edges) == 0:
            raise ValueError("trajectory must contain at least one edge")
        self.edges = list(edges)
        self.starts = np.concatenate([[0.0], np.cumsum([e.dt_star for e in self.edges])])
        self.duration = float(self.starts[-1])

    def evaluate(self, t) -> np.ndarray:
        """Stacked flat samples (M, 15): state and snap; junctions use the later edge."""
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, self.duration)
        idx = np.searchsorted(self.starts, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.edges) - 1)
        out = np.empty((t.size, 15))
        for k in np.unique(idx):
            sel = idx == k
            x, s = self.edges[k].evaluate(t[sel] - self.starts[k])
            out[sel, :12] = x
            out[sel, 12:] = s
        return out


def validate_flat_trajectory(edges: Sequence[SteeringSolution], params: CraneParams, dt: float = 1e-3) -> SimResult:
    """Forward-simulate the flatness feedforward and compare with the predicted states.

    The output grid is uniform with step ``duration / ceil(duration / dt)``.
    Steps that straddle an edge junction are split there, since the snap
    (and therefore the input) jumps at junctions.
    """
    traj = FlatTrajectory(edges)
    if traj.duration == 0.0:
        F = traj.evaluate([0.0])
        u, _, Z, valid = flat_inputs_batch(F, params)
        if not valid.all():
            raise RopeInverted("trajectory maps to an inverted or slack rope")
        return SimResult(np.zeros(1), Z, u, Z.copy(), 0.0)
    if not dt > 0:
        raise NonPositiveStep(f"dt must be positive, got {dt}")
    n = max(int(np.ceil(traj.duration / dt - 1e-9)), 1)
    h = traj.duration / n
    grid = h * np.arange(n + 1)
    grid[-1] = traj.duration
    inner = traj.starts[1:-1]
    # drop junctions that (numerically) coincide with grid points
    near = np.abs(inner - h * np.round(inner / h)) <= 1e-12 * max(traj.duration, 1.0)
    knots = np.union1d(grid, inner[~near])
    a, b = knots[:-1], knots[1:]
    mid = 0.5 * (a + b)
    seg_edge = np.clip(np.searchsorted(traj.starts, mid, side="right") - 1, 0, len(traj.edges) - 1)
    stage_t = np.stack([a, mid, b], axis=1)
    F = np.empty((a.size, 3, 15))
    for k in np.unique(seg_edge):
        sel = seg_edge == k
        e = traj.edges[k]
        local = np.clip(stage_t[sel] - traj.starts[k], 0.0, e.dt_star)
        x, sn = e.evaluate(local.ravel())
        F[sel] = np.hstack([x, sn]).reshape(-1, 3, 15)
    U, _, _, valid = flat_inputs_batch(F.reshape(-1, 15), params)
    if not valid.all():
        raise RopeInverted("trajectory maps to an inverted or slack rope")
    Zs = _rk4(_predicted(traj, np.zeros(1), params)[0], b - a, U.reshape(-1, 3, 3), params)
    on_grid = np.concatenate([[True], np.isin(b, grid)])
    Z = Zs[on_grid]
    pred = _predicted(traj, grid, params)
    u_grid, _, _, _ = flat_inputs_batch(traj.evaluate(grid), params)
    err = float(np.max(np.abs(Z - pred)))
    return SimResult(grid, Z, u_grid, pred, err)


def _predicted(traj: FlatTrajectory, t: np.ndarray, params: CraneParams) -> np.ndarray:
    Z, valid = flat_states_batch(traj.evaluate(t), params)
    if not valid.all():
        raise RopeInverted("trajectory maps to an inverted or slack rope")
    return Z

"""Flat-informed RRT* over LQMT edges.

The tree lives in flat arrays indexed by node id.  Deleted ids are never
reused, so ids stay stable for the lifetime of a tree (and across dumps).
"""

from __future__ import annotations

import heapq
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .crane import CraneParams, FeasibilityBounds, bounds_ok_batch, flat_inputs_batch
from .errors import (
    IncompatibleDump,
    IncompatibleTrees,
    InfeasibleEndpoints,
    NoFreeSpace,
    NoSolution,
    NoSolutionFound,
)
from .lqmt import (
    N_STATE,
    FlatState,
    SteeringBounds,
    SteeringSolution,
    SteeringWeights,
    edge_coeffs_batch,
    evaluate_coeffs,
    solution_at,
    steer_costs,
)
from .scenario import Scenario
from .world import DistanceField, World, clearance_batch, path_collision_free

SEED_STRIDE = 0x9E3779B9
TREE_FORMAT = "flatplan-tree"
TREE_VERSION = 1


@dataclass(frozen=True)
class PlannerConfig:
    """Planner knobs.

    ``t_plan`` is a wall-clock budget; ``max_samples`` optionally caps the
    number of drawn samples, which makes runs reproducible bit for bit.
    ``weights`` and ``feasibility`` default to the scenario's values.
    """

    t_plan: float = 30.0
    workers: int = 1
    seed: int = 0
    weights: Optional[SteeringWeights] = None
    steering: SteeringBounds = field(default_factory=SteeringBounds)
    feasibility: Optional[FeasibilityBounds] = None
    max_samples: Optional[int] = None
    # sampling
    sample_policy: str = "velocity"  # "rest" | "velocity" | "full"
    velocity_fraction: float = 1.0
    accel_max: float = 0.3
    jerk_max: float = 1.0
    max_sample_tries: int = 10_000
    # edge checks
    edge_step: float = 0.02
    bound_shrink: float = 0.02
    screen_points: int = 33  # normalized-time grid of the batched pre-screen (0 disables)
    # parent search
    queue_policy: str = "children"  # "children" | "parent"
    queue_seeds: Optional[int] = None  # None seeds the queue with every unmasked node
    expansion_budget: Optional[int] = None
    # informed rejection and pruning
    informed_cost: str = "through_parent"  # "through_parent" | "direct"
    prune: bool = True
    informed_prune: bool = False
    # replanning
    replan_budget: float = 1.0
    # debug audits every N tree operations (0 disables)
    audit_every: int = 0

    def __post_init__(self):
        if not self.t_plan > 0:
            raise ValueError("t_plan must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.sample_policy not in ("rest", "velocity", "full"):
            raise ValueError(f"unknown sample policy {self.sample_policy!r}")
        if self.queue_policy not in ("children", "parent"):
            raise ValueError(f"unknown queue policy {self.queue_policy!r}")
        if self.informed_cost not in ("through_parent", "direct"):
            raise ValueError(f"unknown informed cost {self.informed_cost!r}")
        if self.max_samples is not None and self.max_samples < 0:
            raise ValueError("max_samples must be non-negative")


# ---------------------------------------------------------------------------
# tree


class TrajectoryTree:
    """Array-backed trajectory tree with cost-to-come, heuristic and mask."""

    def __init__(self, root: FlatState, target: FlatState, weights: SteeringWeights, rng_seed: int = 0,
                 capacity: int = 1024):
        self.target = FlatState(root.vec if target is None else target.vec)
        self.weights = weights
        self.rng_seed = int(rng_seed)
        cap = max(int(capacity), 1)
        self._X = np.zeros((cap, N_STATE))
        self._ctc = np.zeros(cap)
        self._heur = np.zeros(cap)
        self._heur_dt = np.zeros(cap)
        self._edge_cost = np.zeros(cap)
        self._edge_dt = np.zeros(cap)
        self._parent = np.full(cap, -1, dtype=np.int64)
        self._mask = np.zeros(cap, dtype=bool)
        self._alive = np.zeros(cap, dtype=bool)
        # goal edge known feasible (its cost equals the heuristic)
        self._goal_ok = np.zeros(cap, dtype=bool)
        self.children: List[List[int]] = []
        self.n = 0
        self.root = 0
        self.best_cost = np.inf
        self.best_leaf: Optional[int] = None
        self.deleted = 0  # running count of pruned nodes
        self._root_state = FlatState(root.vec)

    # array views over allocated ids
    X = property(lambda self: self._X[: self.n])
    cost_to_come = property(lambda self: self._ctc[: self.n])
    heuristic = property(lambda self: self._heur[: self.n])
    heuristic_dt = property(lambda self: self._heur_dt[: self.n])
    edge_cost = property(lambda self: self._edge_cost[: self.n])
    edge_dt = property(lambda self: self._edge_dt[: self.n])
    parent = property(lambda self: self._parent[: self.n])
    mask = property(lambda self: self._mask[: self.n])
    alive = property(lambda self: self._alive[: self.n])
    goal_ok = property(lambda self: self._goal_ok[: self.n])

    @property
    def root_state(self) -> FlatState:
        return self._root_state

    @property
    def size(self) -> int:
        return int(self.alive.sum())

    def _grow(self):
        cap = 2 * self._X.shape[0]
        for name in ("_X", "_ctc", "_heur", "_heur_dt", "_edge_cost", "_edge_dt", "_parent", "_mask", "_alive",
                     "_goal_ok"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            if name == "_parent":
                new[:] = -1
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def add_node(self, x, parent: int, edge_cost: float, edge_dt: float, heur: float, heur_dt: float) -> int:
        if self.n == self._X.shape[0]:
            self._grow()
        i = self.n
        self._X[i] = np.asarray(getattr(x, "vec", x), dtype=float)
        self._parent[i] = parent
        self._edge_cost[i] = edge_cost
        self._edge_dt[i] = edge_dt
        self._ctc[i] = 0.0 if parent < 0 else self._ctc[parent] + edge_cost
        self._heur[i] = heur
        self._heur_dt[i] = heur_dt
        self._alive[i] = True
        self._mask[i] = True
        self._goal_ok[i] = False
        self.children.append([])
        if parent >= 0:
            self.children[parent].append(i)
        self.n += 1
        return i

    def state(self, i: int) -> FlatState:
        return FlatState(self._X[i])

    def active(self) -> np.ndarray:
        """Ids of alive, unmasked nodes in ascending order."""
        return np.flatnonzero(self.alive & self.mask)

    def alive_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    def path(self, i: int) -> List[int]:
        out = [i]
        while self._parent[out[-1]] >= 0:
            out.append(int(self._parent[out[-1]]))
        return out[::-1]

    def is_ancestor(self, a: int, b: int) -> bool:
        """True if ``a`` lies on the root path of ``b`` (or equals it)."""
        i = b
        while i >= 0:
            if i == a:
                return True
            i = int(self._parent[i])
        return False

    def subtree(self, i: int) -> List[int]:
        out, stack = [], [i]
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(self.children[j])
        return out

    def propagate(self, i: int) -> None:
        """Recompute cost-to-come below ``i`` from the stored edge costs."""
        stack = list(self.children[i])
        while stack:
            j = stack.pop()
            self._ctc[j] = self._ctc[self._parent[j]] + self._edge_cost[j]
            stack.extend(self.children[j])

    def reparent(self, i: int, new_parent: int, edge_cost: float, edge_dt: float) -> None:
        old = int(self._parent[i])
        self.children[old].remove(i)
        self.children[new_parent].append(i)
        self._parent[i] = new_parent
        self._edge_cost[i] = edge_cost
        self._edge_dt[i] = edge_dt
        self._ctc[i] = self._ctc[new_parent] + edge_cost
        self.propagate(i)

    def delete(self, i: int) -> None:
        p = int(self._parent[i])
        if p >= 0 and i in self.children[p]:
            self.children[p].remove(i)
        self._alive[i] = False
        self._mask[i] = False
        self._goal_ok[i] = False
        if self.best_leaf == i:
            self.best_leaf = None

    def refresh_best(self) -> bool:
        """Lower J* to the cheapest known-feasible goal connection; True if improved."""
        ids = np.flatnonzero(self.alive & self.goal_ok)
        if ids.size == 0:
            return False
        tot = self.cost_to_come[ids] + self.heuristic[ids]
        k = int(np.argmin(tot))
        if tot[k] < self.best_cost:
            self.best_cost = float(tot[k])
            self.best_leaf = int(ids[k])
            return True
        return False

    def copy(self) -> "TrajectoryTree":
        t = TrajectoryTree(self._root_state, self.target, self.weights, self.rng_seed, capacity=max(self.n, 1))
        for name in ("_X", "_ctc", "_heur", "_heur_dt", "_edge_cost", "_edge_dt", "_parent", "_mask", "_alive",
                     "_goal_ok"):
            getattr(t, name)[: self.n] = getattr(self, name)[: self.n]
        t.children = [list(c) for c in self.children]
        t.n, t.root, t.best_cost, t.best_leaf = self.n, self.root, self.best_cost, self.best_leaf
        t.deleted = self.deleted
        return t


def audit_tree(tree: TrajectoryTree, mask_rule: Optional[str] = "plain") -> List[str]:
    """Structural audit; returns a list of problems (empty when healthy).

    Checks acyclicity and reachability from the root, parent/child duality,
    exact cost additivity and, unless ``mask_rule`` is None, the mask law.
    """
    problems: List[str] = []
    alive = tree.alive
    if not alive[tree.root] or tree.parent[tree.root] != -1 or tree.cost_to_come[tree.root] != 0.0:
        problems.append("root must be alive, parentless, with zero cost-to-come")
    seen = np.zeros(tree.n, dtype=bool)
    stack = [tree.root]
    while stack:
        i = stack.pop()
        if seen[i]:
            problems.append(f"cycle or shared child at node {i}")
            continue
        seen[i] = True
        for c in tree.children[i]:
            if not alive[c]:
                problems.append(f"deleted node {c} listed as child of {i}")
            if tree.parent[c] != i:
                problems.append(f"child {c} of {i} names parent {tree.parent[c]}")
            stack.append(c)
    unreachable = np.flatnonzero(alive & ~seen)
    if unreachable.size:
        problems.append(f"{unreachable.size} alive nodes unreachable from root")
    for i in np.flatnonzero(alive):
        p = tree.parent[i]
        if p < 0:
            continue
        if not alive[p] or i not in tree.children[p]:
            problems.append(f"node {i} missing from children of parent {p}")
        if tree.cost_to_come[i] != tree.cost_to_come[p] + tree.edge_cost[i]:
            problems.append(f"cost additivity broken at node {i}")
    if mask_rule is not None and np.isfinite(tree.best_cost):
        key = tree.cost_to_come + (tree.heuristic if mask_rule == "informed" else 0.0)
        bad = np.flatnonzero(alive & (tree.mask != (key <= tree.best_cost)))
        if bad.size:
            problems.append(f"mask law violated at {bad.size} nodes")
        over = np.flatnonzero(alive & tree.mask & (tree.cost_to_come > tree.best_cost))
        if over.size:
            problems.append(f"{over.size} unmasked nodes cost more than J*")
    return problems


# ---------------------------------------------------------------------------
# planning context and edge checks


class PlanningContext:
    """Immutable data shared by every tree operation of one planning problem."""

    def __init__(self, scenario: Scenario, config: PlannerConfig = PlannerConfig(), world: Optional[World] = None):
        self.scenario = scenario
        self.config = config
        self.world = world if world is not None else scenario.build_world()
        self.params: CraneParams = scenario.crane
        self.weights: SteeringWeights = config.weights or scenario.weights
        self.steering = config.steering
        self.bounds: FeasibilityBounds = config.feasibility or scenario.bounds
        self.check_bounds = self.bounds.shrunk(config.bound_shrink) if config.bound_shrink > 0 else self.bounds
        self.radius = self.params.payload_radius
        self.margin = self.world.margin
        self._screen_grid = np.linspace(0.0, 1.0, max(config.screen_points, 2))

    @property
    def field(self) -> DistanceField:
        return self.world.field

    def states_ok(self, states: np.ndarray, snap: np.ndarray) -> bool:
        """Collision and bound check of temporally ordered flat samples."""
        if not path_collision_free(self.field, states[:, :3], self.radius, self.margin):
            return False
        u, _, Z, valid = flat_inputs_batch(np.hstack([states, snap]), self.params)
        return bool(valid.all() and bounds_ok_batch(Z, u, self.check_bounds).all())

    def edge_ok(self, sol: SteeringSolution) -> bool:
        _, states, snap = sol.sample(self.config.edge_step)
        return self.states_ok(states, snap)

    def screen(self, x0s: np.ndarray, x1s: np.ndarray, dts: np.ndarray) -> np.ndarray:
        """Batched necessary test: sway and clearance on a coarse normalized-time grid.

        A pair that fails here is never handed to the full edge check.
        """
        n = dts.shape[0]
        ok = np.isfinite(dts)
        m = self.config.screen_points
        moving = ok & (dts > 0)
        if m <= 0 or not moving.any():
            return ok
        idx = np.flatnonzero(moving)
        x0s = np.broadcast_to(x0s, (n, N_STATE))[idx]
        x1s = np.broadcast_to(x1s, (n, N_STATE))[idx]
        C = edge_coeffs_batch(x0s, x1s, dts[idx], self.weights)
        V = evaluate_coeffs(C, self._screen_grid, orders=(0, 2))
        P, A = V[:, 0], V[:, 1]
        tz = A[..., 2] + self.params.gravity
        beta = np.arctan2(A[..., 0], tz)
        alpha = np.arctan2(A[..., 1], np.hypot(A[..., 0], tz))
        smax = self.check_bounds.sway_max
        good = (tz > 0) & (np.abs(alpha) <= smax) & (np.abs(beta) <= smax)
        good = good.all(axis=1)
        if good.any():
            g = np.flatnonzero(good)
            c, inside = clearance_batch(self.field, P[g].reshape(-1, 3))
            clear = (inside & (c >= self.radius + self.margin) & (c > 0.0)).reshape(g.size, -1).all(axis=1)
            good[g] = clear
        ok[idx] = good
        return ok

    def state_ok(self, x: FlatState) -> bool:
        return self.states_ok(x.vec[None, :], np.zeros((1, 3)))

    def steer_costs(self, x0s, x1s):
        return steer_costs(x0s, x1s, self.weights, self.steering)

    def heuristic(self, x, target: FlatState) -> Tuple[float, float]:
        dt, c = self.steer_costs(np.asarray(getattr(x, "vec", x))[None, :], target.vec[None, :])
        return float(c[0]), float(dt[0])

    def edge(self, x0, x1, dt: float) -> SteeringSolution:
        return solution_at(x0, x1, dt, self.weights)


def new_tree(ctx: PlanningContext, start: Optional[FlatState] = None, target: Optional[FlatState] = None,
             seed: int = 0) -> TrajectoryTree:
    start = start or ctx.scenario.start
    target = target or ctx.scenario.target
    tree = TrajectoryTree(start, target, ctx.weights, seed)
    h, hdt = ctx.heuristic(start, target)
    tree.add_node(start, -1, 0.0, 0.0, h, hdt)
    return tree


def check_endpoints(ctx: PlanningContext, *states: FlatState) -> None:
    for x in states:
        if not ctx.state_ok(x):
            raise InfeasibleEndpoints(f"state at {x.p.tolist()} is in collision or violates the bounds")


# ---------------------------------------------------------------------------
# core operations


def sample_free(field: DistanceField, b: FeasibilityBounds, rng: np.random.Generator, radius: float = 0.05,
                margin: float = 0.02, params: Optional[CraneParams] = None, policy: str = "velocity",
                velocity_fraction: float = 1.0, accel_max: float = 0.3, jerk_max: float = 1.0,
                max_tries: int = 10_000) -> FlatState:
    """Uniform flat-state sample whose position is clear of obstacles.

    With ``params`` the sampled state must also map to a bounded crane state
    and input (for instance the hoist limit rules out positions near the top).
    """
    lo, hi = np.asarray(field.lo), np.asarray(field.hi)
    vlo, vhi = b.velocity_bounds
    vmid, vhalf = 0.5 * (vlo + vhi), 0.5 * (vhi - vlo) * velocity_fraction
    need = radius + margin
    for _ in range(max_tries):
        p = rng.uniform(lo, hi)
        v = rng.uniform(vmid - vhalf, vmid + vhalf) if policy != "rest" else np.zeros(3)
        if policy == "full":
            a = rng.uniform(-accel_max, accel_max, 3)
            j = rng.uniform(-jerk_max, jerk_max, 3)
        else:
            a = j = np.zeros(3)
        c, inside = clearance_batch(field, p[None, :])
        if not inside[0] or c[0] < need or c[0] <= 0.0:
            continue
        x = FlatState.from_derivatives(p, v, a, j)
        if params is not None:
            u, _, Z, valid = flat_inputs_batch(np.concatenate([x.vec, np.zeros(3)])[None, :], params)
            if not (valid[0] and bounds_ok_batch(Z, u, b)[0]):
                continue
        return x
    raise NoFreeSpace(f"no free sample after {max_tries} tries")


def find_parent(tree: TrajectoryTree, x_new: FlatState, ctx: PlanningContext, limit: float = np.inf,
                stats: Optional[Dict[str, int]] = None) -> Optional[Tuple[int, SteeringSolution]]:
    """Cheapest feasible parent for ``x_new`` by best-first search.

    Candidates are popped in ascending cost-to-come + steer cost; the first
    feasible edge wins.  Keys at or above ``limit`` are never expanded.  On
    an infeasible edge the node's children (or its parent, per the queue
    policy) join the queue if they are not in it yet.
    """
    cfg = ctx.config
    ids = tree.active()
    if ids.size == 0:
        return None
    dts, costs = ctx.steer_costs(tree.X[ids], np.broadcast_to(x_new.vec, (ids.size, N_STATE)))
    keys = tree.cost_to_come[ids] + costs
    order = np.lexsort((ids, keys))
    if cfg.queue_seeds is not None:
        order = order[: cfg.queue_seeds]
    budget = cfg.expansion_budget if cfg.expansion_budget is not None else ids.size
    checks = 0
    found = None
    if cfg.queue_seeds is None:
        # every candidate is queued up front, so propagation never adds nodes;
        # screen in growing chunks and fully check survivors in key order
        order = order[keys[order] < limit]
        pos, chunk = 0, 8
        while pos < order.size and checks < budget and found is None:
            ks = order[pos : pos + chunk]
            pos += ks.size
            chunk *= 4
            passed = ctx.screen(tree.X[ids[ks]], x_new.vec, dts[ks])
            checks_here = 0
            for k, p in zip(ks, passed):
                if checks + checks_here >= budget:
                    break
                checks_here += 1
                if not p:
                    continue
                sol = ctx.edge(tree.X[ids[k]], x_new.vec, float(dts[k]))
                if ctx.edge_ok(sol):
                    found = (int(ids[k]), sol)
                    break
            checks += checks_here
    else:
        pos_of = {int(i): k for k, i in enumerate(ids)}
        heap = [(float(keys[k]), int(ids[k])) for k in order]
        heapq.heapify(heap)
        queued = {i for _, i in heap}
        while heap and checks < budget:
            key, i = heapq.heappop(heap)
            if not key < limit:
                break
            k = pos_of[i]
            checks += 1
            if ctx.screen(tree.X[i][None, :], x_new.vec, dts[k : k + 1])[0]:
                sol = ctx.edge(tree.X[i], x_new.vec, float(dts[k]))
                if ctx.edge_ok(sol):
                    found = (i, sol)
                    break
            nxt = tree.children[i] if cfg.queue_policy == "children" else [int(tree.parent[i])]
            for j in nxt:
                if j >= 0 and j in pos_of and j not in queued:
                    queued.add(j)
                    heapq.heappush(heap, (float(keys[pos_of[j]]), j))
    if stats is not None:
        stats["edge_checks"] = stats.get("edge_checks", 0) + checks
    return found


def insert(tree: TrajectoryTree, x_new: FlatState, parent: int, edge: SteeringSolution, ctx: PlanningContext,
           heuristic: Optional[Tuple[float, float]] = None) -> int:
    h, hdt = heuristic if heuristic is not None else ctx.heuristic(x_new, tree.target)
    i = tree.add_node(x_new, parent, edge.cost, edge.dt_star, h, hdt)
    if ctx.config.prune:
        tree._mask[i] = _mask_key(tree, ctx, np.array([i]))[0] <= tree.best_cost
    return i


def rewire(tree: TrajectoryTree, new_id: int, ctx: PlanningContext) -> int:
    """Reparent unmasked nodes through ``new_id`` where that lowers their cost-to-come."""
    ids = tree.active()
    ids = ids[(ids != new_id) & (ids != tree.root)]
    if ids.size == 0:
        return 0
    x_new = tree.X[new_id]
    dts, costs = ctx.steer_costs(np.broadcast_to(x_new, (ids.size, N_STATE)), tree.X[ids])
    base = tree.cost_to_come[new_id]
    cand = np.flatnonzero(base + costs < tree.cost_to_come[ids])
    if cand.size:
        cand = cand[ctx.screen(x_new, tree.X[ids[cand]], dts[cand])]
    count = 0
    for k in cand:
        i = int(ids[k])
        if not base + costs[k] < tree.cost_to_come[i] or tree.is_ancestor(i, new_id):
            continue
        sol = ctx.edge(x_new, tree.X[i], float(dts[k]))
        if not tree.cost_to_come[new_id] + sol.cost < tree.cost_to_come[i]:
            continue
        if ctx.edge_ok(sol):
            tree.reparent(i, new_id, sol.cost, sol.dt_star)
            count += 1
    return count


def try_connect_target(tree: TrajectoryTree, new_id: int, ctx: PlanningContext) -> float:
    """Connect ``new_id`` to the target; returns the (possibly lowered) J*."""
    total = tree.cost_to_come[new_id] + tree.heuristic[new_id]
    if not total < tree.best_cost:
        return tree.best_cost
    sol = ctx.edge(tree.X[new_id], tree.target.vec, float(tree.heuristic_dt[new_id]))
    if ctx.edge_ok(sol):
        tree._goal_ok[new_id] = True
        tree.refresh_best()
        prune(tree, tree.best_cost, ctx)
    return tree.best_cost


def _mask_key(tree: TrajectoryTree, ctx: Optional[PlanningContext], ids: np.ndarray) -> np.ndarray:
    key = tree.cost_to_come[ids]
    if ctx is not None and ctx.config.informed_prune:
        key = key + tree.heuristic[ids]
    return key


def prune(tree: TrajectoryTree, J: float, ctx: Optional[PlanningContext] = None) -> int:
    """Mask nodes costlier than ``J`` and delete fully masked subtrees.

    Returns the number of deleted nodes.  The chain to the best leaf is kept.
    """
    if not np.isfinite(J) or (ctx is not None and not ctx.config.prune):
        return 0
    ids = tree.alive_ids()
    tree._mask[ids] = _mask_key(tree, ctx, ids) <= J
    keep = set(tree.path(tree.best_leaf)) if tree.best_leaf is not None else {tree.root}
    # post-order: a masked node goes when all its descendants go
    deletable = {}
    order, stack = [], [tree.root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(tree.children[i])
    for i in reversed(order):
        deletable[i] = (not tree._mask[i] and i not in keep
                        and all(deletable[c] for c in tree.children[i]))
    count = 0
    for i in order:
        if deletable[i] and tree._alive[i]:
            for j in tree.subtree(i):
                tree._alive[j] = False
                tree._mask[j] = False
                tree._goal_ok[j] = False
                count += 1
            tree.children[int(tree.parent[i])].remove(i)
    tree.deleted += count
    return count


# ---------------------------------------------------------------------------
# results


@dataclass
class PlanResult:
    trajectory: List[SteeringSolution]
    total_cost: float
    travel_time: float
    tree: TrajectoryTree
    stats: Dict[str, Any]


def extract_trajectory(tree: TrajectoryTree, ctx: PlanningContext) -> List[SteeringSolution]:
    """Edges root -> best leaf -> target, rebuilt from the stored durations."""
    if not np.isfinite(tree.best_cost) or tree.best_leaf is None:
        raise NoSolution("tree holds no solution")
    chain = tree.path(tree.best_leaf)
    edges = [ctx.edge(tree.X[p], tree.X[c], float(tree.edge_dt[c])) for p, c in zip(chain[:-1], chain[1:])]
    leaf = tree.best_leaf
    edges.append(ctx.edge(tree.X[leaf], tree.target.vec, float(tree.heuristic_dt[leaf])))
    return edges


def _result(tree: TrajectoryTree, ctx: PlanningContext, stats: Dict[str, Any]) -> PlanResult:
    edges = extract_trajectory(tree, ctx)
    total = 0.0
    for e in edges:
        total += e.cost
    travel = float(sum(e.dt_star for e in edges))
    stats["tree_size"] = tree.size
    return PlanResult(edges, float(total), travel, tree, stats)


# ---------------------------------------------------------------------------
# main loop


def _new_stats() -> Dict[str, Any]:
    return {
        "samples": 0,
        "rejected_informed": 0,
        "rejected_unreachable": 0,
        "inserted": 0,
        "rewires": 0,
        "pruned": 0,
        "edge_checks": 0,
        "audits": 0,
        "audit_failures": [],
        "cost_log": [],  # (iteration, J*) at every improvement
        "cost_log_time": [],  # matching wall-clock offsets, s
        "first_solution_iteration": None,
        "wall_time": 0.0,
    }


def _audit(tree: TrajectoryTree, ctx: PlanningContext, stats: Dict[str, Any], where: str) -> None:
    rule = None if not ctx.config.prune else ("informed" if ctx.config.informed_prune else "plain")
    stats["audits"] += 1
    for p in audit_tree(tree, rule):
        stats["audit_failures"].append(f"{where}: {p}")


def _log_cost(tree: TrajectoryTree, stats: Dict[str, Any], it: int, t0: float) -> None:
    log = stats["cost_log"]
    if np.isfinite(tree.best_cost) and (not log or tree.best_cost < log[-1][1]):
        log.append((it, float(tree.best_cost)))
        stats["cost_log_time"].append(time.perf_counter() - t0)
        if stats["first_solution_iteration"] is None:
            stats["first_solution_iteration"] = it


def grow(tree: TrajectoryTree, ctx: PlanningContext, rng: np.random.Generator, budget: float,
         max_samples: Optional[int] = None, stats: Optional[Dict[str, Any]] = None,
         until_solution: bool = False) -> Dict[str, Any]:
    """Run the sample/extend/rewire/connect/prune loop on ``tree`` in place.

    With ``until_solution`` the loop also stops once J* is finite.
    """
    cfg = ctx.config
    stats = stats if stats is not None else _new_stats()
    t0 = time.perf_counter()
    deadline = t0 + budget
    start_vec = tree.X[tree.root]
    ops = 0
    it = stats["samples"]
    _log_cost(tree, stats, it, t0)
    drawn = 0
    deleted0 = tree.deleted
    while time.perf_counter() < deadline and (max_samples is None or drawn < max_samples):
        if tree.best_cost <= 0.0:
            break  # nothing can beat a zero-cost solution
        x = sample_free(ctx.field, ctx.check_bounds, rng, ctx.radius, ctx.margin, ctx.params, cfg.sample_policy,
                        cfg.velocity_fraction, cfg.accel_max, cfg.jerk_max, cfg.max_sample_tries)
        drawn += 1
        it += 1
        stats["samples"] += 1
        h, hdt = ctx.heuristic(x, tree.target)
        J = tree.best_cost
        # the direct cost lower-bounds every through-parent cost, so it is always a valid early reject
        if np.isfinite(J):
            _, c0 = ctx.steer_costs(start_vec[None, :], x.vec[None, :])
            if c0[0] + h >= J:
                stats["rejected_informed"] += 1
                continue
        limit = J - h if cfg.informed_cost == "through_parent" else np.inf
        found = find_parent(tree, x, ctx, limit, stats)
        if found is None:
            if np.isfinite(limit):
                stats["rejected_informed"] += 1
            else:
                stats["rejected_unreachable"] += 1
            continue
        pid, edge = found
        i = insert(tree, x, pid, edge, ctx, (h, hdt))
        stats["inserted"] += 1
        stats["rewires"] += rewire(tree, i, ctx)
        if tree.refresh_best():
            prune(tree, tree.best_cost, ctx)
        try_connect_target(tree, i, ctx)
        _log_cost(tree, stats, it, t0)
        ops += 1
        if until_solution and np.isfinite(tree.best_cost):
            break
        if cfg.audit_every and ops % cfg.audit_every == 0:
            _audit(tree, ctx, stats, f"iteration {it}")
    if cfg.audit_every:
        _audit(tree, ctx, stats, f"end at iteration {it}")
    stats["pruned"] += tree.deleted - deleted0
    stats["wall_time"] += time.perf_counter() - t0
    return stats


def worker_seed(seed: int, i: int) -> int:
    return (int(seed) + i * SEED_STRIDE) % (1 << 63)


def _run_worker(scenario: Scenario, config: PlannerConfig, index: int, world: Optional[World] = None):
    ctx = PlanningContext(scenario, config, world)
    seed = worker_seed(config.seed, index)
    tree = new_tree(ctx, seed=seed)
    stats = _new_stats()
    try_connect_target(tree, tree.root, ctx)
    rng = np.random.default_rng(seed)
    grow(tree, ctx, rng, config.t_plan, config.max_samples, stats)
    return tree, stats


def effective_workers(config: PlannerConfig) -> int:
    cap = os.environ.get("FLATPLAN_THREADS")
    n = config.workers
    if cap:
        n = min(n, max(int(cap), 1))
    return n


def plan(scenario: Scenario, config: PlannerConfig = PlannerConfig(), world: Optional[World] = None) -> PlanResult:
    """Plan from the scenario's start to its target.

    Raises InfeasibleEndpoints for blocked endpoints and NoSolutionFound
    (carrying the tree) when the budget ends without a solution.
    """
    t0 = time.perf_counter()
    ctx = PlanningContext(scenario, config, world)
    check_endpoints(ctx, scenario.start, scenario.target)
    n = effective_workers(config)
    if n == 1:
        tree, stats = _run_worker(scenario, config, 0, ctx.world)
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            futures = [pool.submit(_run_worker, scenario, config, i) for i in range(config.workers)]
            results = [f.result() for f in futures]
        trees = [r[0] for r in results]
        tree = merge(trees, ctx)
        stats = _new_stats()
        for key in ("samples", "rejected_informed", "rejected_unreachable", "inserted", "rewires", "pruned",
                    "edge_checks", "audits"):
            stats[key] = sum(r[1][key] for r in results)
        stats["audit_failures"] = [f for r in results for f in r[1]["audit_failures"]]
        stats["workers"] = [{k: r[1][k] for k in ("samples", "inserted", "cost_log")} for r in results]
        stats["cost_log"] = [(stats["samples"], float(tree.best_cost))] if np.isfinite(tree.best_cost) else []
        if config.audit_every:
            _audit(tree, ctx, stats, "after merge")
    stats["seed"] = config.seed
    stats["wall_time"] = time.perf_counter() - t0
    if not np.isfinite(tree.best_cost):
        stats["tree_size"] = tree.size
        raise NoSolutionFound("no solution within the planning budget", tree=tree, stats=stats)
    return _result(tree, ctx, stats)


def merge(trees: Sequence[TrajectoryTree], ctx: PlanningContext) -> TrajectoryTree:
    """Fold several trees into the one with the best J*.

    Unmasked nodes of the other trees are re-homed through find_parent in
    order of tree index and cost-to-come; states already present are skipped.
    """
    if not trees:
        raise IncompatibleTrees("nothing to merge")
    ref = trees[0]
    for t in trees[1:]:
        if (t.root_state != ref.root_state or t.target != ref.target
                or t.weights.r != ref.weights.r):
            raise IncompatibleTrees("trees differ in root, target or weights")
    costs = [t.best_cost for t in trees]
    b = int(np.argmin(costs)) if np.any(np.isfinite(costs)) else 0
    base = trees[b].copy()
    seen = {base.X[i].tobytes() for i in base.alive_ids()}
    for k, t in enumerate(trees):
        if k == b:
            continue
        ids = t.active()
        ids = ids[np.lexsort((ids, t.cost_to_come[ids]))]
        for i in ids:
            key = t.X[i].tobytes()
            if key in seen:
                continue
            x = FlatState(t.X[i])
            h, hdt = float(t.heuristic[i]), float(t.heuristic_dt[i])
            found = find_parent(base, x, ctx, base.best_cost)
            if found is None:
                continue
            pid, edge = found
            j = insert(base, x, pid, edge, ctx, (h, hdt))
            seen.add(key)
            if t.goal_ok[i]:
                base._goal_ok[j] = True
            rewire(base, j, ctx)
            base.refresh_best()
            try_connect_target(base, j, ctx)
    base.refresh_best()
    prune(base, base.best_cost, ctx)
    return base


def retarget(tree: TrajectoryTree, target: FlatState, ctx: PlanningContext) -> TrajectoryTree:
    """Copy of ``tree`` with heuristics recomputed for a new target and J* reset."""
    t = tree.copy()
    t.target = FlatState(target.vec)
    ids = t.alive_ids()
    dts, costs = ctx.steer_costs(t.X[ids], np.broadcast_to(target.vec, (ids.size, N_STATE)))
    t._heur[ids] = costs
    t._heur_dt[ids] = dts
    t._goal_ok[:] = False
    t._mask[ids] = True
    t.best_cost = np.inf
    t.best_leaf = None
    return t


def replan(tree: TrajectoryTree, new_target: FlatState, ctx: PlanningContext,
           budget: Optional[float] = None) -> PlanResult:
    """Reuse ``tree`` for a new target.

    Nodes are tried in ascending cost-to-come + heuristic; the first feasible
    target edge gives an immediate solution, which is then refined for the
    replanning budget.  Without any connection the full loop resumes,
    warm-started, until a first solution (at most the planning budget) and
    is then refined the same way.  The input tree is left untouched.
    """
    cfg = ctx.config
    t0 = time.perf_counter()
    check_endpoints(ctx, new_target)
    stats = _new_stats()
    if new_target == tree.target and np.isfinite(tree.best_cost):
        stats.update(replan_connect_time=0.0, connected_without_sampling=True, wall_time=0.0)
        return _result(tree.copy(), ctx, stats)
    t = retarget(tree, new_target, ctx)
    ids = t.alive_ids()
    order = ids[np.lexsort((ids, t.cost_to_come[ids] + t.heuristic[ids]))]
    connected = False
    deleted0 = t.deleted
    for i in order:
        try_connect_target(t, int(i), ctx)
        if np.isfinite(t.best_cost):
            connected = True
            break
    stats["replan_connect_time"] = time.perf_counter() - t0
    stats["connected_without_sampling"] = connected
    _log_cost(t, stats, 0, t0)
    rng = np.random.default_rng(worker_seed(cfg.seed, 0))
    refine = cfg.replan_budget if budget is None else budget
    if connected:
        prune(t, t.best_cost, ctx)
        stats["pruned"] += t.deleted - deleted0
    else:
        # warm-started search for a first solution, then the same refinement
        grow(t, ctx, rng, cfg.t_plan, cfg.max_samples, stats, until_solution=True)
    if np.isfinite(t.best_cost) and refine > 0:
        grow(t, ctx, rng, refine, cfg.max_samples, stats)
    stats["wall_time"] = time.perf_counter() - t0
    stats["seed"] = cfg.seed
    if not np.isfinite(t.best_cost):
        stats["tree_size"] = t.size
        raise NoSolutionFound("replanning found no solution", tree=t, stats=stats)
    return _result(t, ctx, stats)


# ---------------------------------------------------------------------------
# tree dumps


def _num(x: float):
    return float(x) if np.isfinite(x) else None


def tree_to_dict(tree: TrajectoryTree) -> Dict[str, Any]:
    # breadth-first order so parents precede children
    ids, head = [tree.root], 0
    while head < len(ids):
        ids.extend(tree.children[ids[head]])
        head += 1
    remap = {int(i): k for k, i in enumerate(ids)}
    nodes = []
    for i in ids:
        p = int(tree.parent[i])
        nodes.append({
            "id": remap[int(i)],
            "state": tree.X[i].tolist(),
            "cost_to_come": float(tree.cost_to_come[i]),
            "heuristic": float(tree.heuristic[i]),
            "heuristic_dt": float(tree.heuristic_dt[i]),
            "edge_cost": float(tree.edge_cost[i]),
            "edge_dt": float(tree.edge_dt[i]),
            "parent": remap[p] if p >= 0 else None,
            "mask": bool(tree.mask[i]),
            "goal_ok": bool(tree.goal_ok[i]),
        })
    return {
        "format": TREE_FORMAT,
        "version": TREE_VERSION,
        "header": {
            "seed": tree.rng_seed,
            "weights": list(tree.weights.r),
            "root": remap[tree.root],
            "target": tree.target.vec.tolist(),
            "best_cost": _num(tree.best_cost),
            "best_leaf": remap[tree.best_leaf] if tree.best_leaf is not None else None,
        },
        "nodes": nodes,
    }


def tree_from_dict(d: Dict[str, Any]) -> TrajectoryTree:
    if not isinstance(d, dict) or d.get("format") != TREE_FORMAT:
        raise IncompatibleDump("not a tree dump")
    if d.get("version") != TREE_VERSION:
        raise IncompatibleDump(f"unsupported tree dump version {d.get('version')!r}")
    try:
        h = d["header"]
        nodes = d["nodes"]
        root = nodes[h["root"]]
        tree = TrajectoryTree(FlatState(root["state"]), FlatState(h["target"]), SteeringWeights(tuple(h["weights"])),
                              int(h["seed"]), capacity=max(len(nodes), 1))
        for k, nd in enumerate(nodes):
            if nd["id"] != k:
                raise IncompatibleDump("node ids must be contiguous and ordered")
            p = -1 if nd["parent"] is None else int(nd["parent"])
            if p >= k:
                raise IncompatibleDump("parents must precede their children")
            tree.add_node(nd["state"], p, nd["edge_cost"], nd["edge_dt"], nd["heuristic"], nd["heuristic_dt"])
            tree._ctc[k] = nd["cost_to_come"]
            tree._mask[k] = nd["mask"]
            tree._goal_ok[k] = nd.get("goal_ok", False)
        tree.root = int(h["root"])
        tree.best_cost = np.inf if h["best_cost"] is None else float(h["best_cost"])
        tree.best_leaf = h["best_leaf"]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise IncompatibleDump(f"malformed tree dump: {exc}") from exc
    return tree


def save_tree(tree: TrajectoryTree, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree)) + "\n", encoding="utf-8")


def load_tree(path: Union[str, Path]) -> TrajectoryTree:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IncompatibleDump(f"cannot read tree dump: {exc}") from exc
    return tree_from_dict(d)

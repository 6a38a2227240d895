import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatplan.errors import (
    IncompatibleDump,
    IncompatibleTrees,
    InfeasibleEndpoints,
    NoFreeSpace,
    NoSolution,
    NoSolutionFound,
)
from flatplan.lqmt import FlatState, SteeringWeights, steer
from flatplan.planner import (
    PlannerConfig,
    PlanningContext,
    TrajectoryTree,
    audit_tree,
    extract_trajectory,
    find_parent,
    grow,
    insert,
    load_tree,
    merge,
    new_tree,
    plan,
    prune,
    replan,
    rewire,
    sample_free,
    save_tree,
    tree_from_dict,
    tree_to_dict,
    try_connect_target,
)
from flatplan.scenario import Scenario
from flatplan.world import Aabb, Workspace, edt, rasterize

WS = Workspace((0, 0, 0), (1, 1, 0.8))
START = FlatState.rest([0.2, 0.2, 0.3])
GOAL = FlatState.rest([0.45, 0.3, 0.3])


def _scenario(obstacles=(), start=START, target=GOAL):
    return Scenario(WS, list(obstacles), start, target, resolution=0.02)


OPEN = _scenario()
PILLAR = _scenario([Aabb((0.45, 0.4, 0.0), (0.1, 0.2, 0.8))], FlatState.rest([0.3, 0.5, 0.3]),
                   FlatState.rest([0.7, 0.5, 0.3]))
_CTX = {}


def _ctx(sc, **cfg):
    key = (id(sc), tuple(sorted(cfg.items())))
    if key not in _CTX:
        _CTX[key] = PlanningContext(sc, PlannerConfig(**cfg))
    return _CTX[key]


def _grown(sc, n, seed=0, **cfg):
    ctx = _ctx(sc, **cfg)
    tree = new_tree(ctx, seed=seed)
    try_connect_target(tree, tree.root, ctx)
    stats = grow(tree, ctx, np.random.default_rng(seed), 1e9, n)
    return tree, ctx, stats


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(t_plan=0)
    with pytest.raises(ValueError):
        PlannerConfig(workers=0)
    with pytest.raises(ValueError):
        PlannerConfig(sample_policy="bogus")
    with pytest.raises(ValueError):
        PlannerConfig(max_samples=-1)


def test_sample_free_properties():
    ctx = _ctx(PILLAR)
    rng = np.random.default_rng(0)
    need = ctx.radius + ctx.margin
    box = PILLAR.obstacles[0]
    vlo, vhi = ctx.check_bounds.velocity_bounds
    for policy in ("rest", "velocity", "full"):
        for _ in range(50):
            x = sample_free(ctx.field, ctx.check_bounds, rng, ctx.radius, ctx.margin, ctx.params, policy)
            assert WS.contains(x.p)[0]
            assert box.distance(x.p)[0] >= need
            assert np.all(x.v >= vlo) and np.all(x.v <= vhi)
            if policy == "rest":
                assert not np.any(x.v)
            if policy != "full":
                assert not np.any(x.a) and not np.any(x.j)


def test_sample_free_raises_when_blocked():
    field = edt(rasterize([Aabb((0, 0, 0), (1, 1, 1))], Workspace((0, 0, 0), (1, 1, 1)), 0.1))
    with pytest.raises(NoFreeSpace):
        sample_free(field, PlannerConfig().feasibility or OPEN.bounds, np.random.default_rng(0), max_tries=50)


def test_find_parent_on_root_only_tree():
    ctx = _ctx(OPEN)
    tree = new_tree(ctx)
    x = FlatState.rest([0.3, 0.25, 0.3])
    pid, edge = find_parent(tree, x, ctx)
    ref = steer(START, x)
    assert pid == tree.root
    assert edge.cost == pytest.approx(ref.cost, rel=1e-10)
    assert find_parent(tree, x, ctx, limit=0.5 * ref.cost) is None


def test_find_parent_matches_exhaustive_oracle():
    tree, ctx, _ = _grown(PILLAR, 400, seed=4, prune=False)
    assert 5 <= tree.size <= 60
    rng = np.random.default_rng(9)
    for _ in range(5):
        x = sample_free(ctx.field, ctx.check_bounds, rng, ctx.radius, ctx.margin, ctx.params)
        best = np.inf
        for i in tree.active():
            e = steer(tree.state(i), x, ctx.weights, ctx.steering)
            if e.dt_star > 0 and ctx.edge_ok(e):
                best = min(best, tree.cost_to_come[i] + e.cost)
        found = find_parent(tree, x, ctx)
        if not np.isfinite(best):
            assert found is None
            continue
        pid, edge = found
        assert tree.cost_to_come[pid] + edge.cost == pytest.approx(best, rel=1e-9)
        assert ctx.edge_ok(edge)


def test_insert_cost_additivity():
    ctx = _ctx(OPEN)
    tree = new_tree(ctx)
    a = FlatState.rest([0.3, 0.2, 0.3])
    pid, e = find_parent(tree, a, ctx)
    i = insert(tree, a, pid, e, ctx)
    b = FlatState.rest([0.35, 0.3, 0.3])
    e2 = steer(a, b)
    j = insert(tree, b, i, e2, ctx)
    assert tree.cost_to_come[j] == tree.cost_to_come[i] + e2.cost
    assert tree.heuristic[j] == pytest.approx(steer(b, GOAL).cost, rel=1e-10)
    assert tree.parent[j] == i and j in tree.children[i]
    assert audit_tree(tree) == []


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 10_000))
def test_property_grow_keeps_tree_healthy(seed):
    tree, ctx, stats = _grown(PILLAR, 200, seed=seed, audit_every=1)
    assert stats["audits"] > 0
    assert stats["audit_failures"] == []
    assert audit_tree(tree, "plain") == []
    log = [c for _, c in stats["cost_log"]]
    assert all(b < a for a, b in zip(log, log[1:]))


def test_rewire_constructed_chain():
    ctx = _ctx(OPEN, prune=False)
    tree = new_tree(ctx)
    detour = FlatState.rest([0.2, 0.5, 0.3])
    c = FlatState.rest([0.3, 0.3, 0.3])
    e1 = steer(START, detour)
    i1 = insert(tree, detour, tree.root, e1, ctx)
    e2 = steer(detour, c)
    i2 = insert(tree, c, i1, e2, ctx)
    old = tree.cost_to_come[i2]
    d = FlatState.rest([0.25, 0.25, 0.3])
    e3 = steer(START, d)
    i3 = insert(tree, d, tree.root, e3, ctx)
    assert rewire(tree, i3, ctx) == 1
    assert tree.parent[i2] == i3
    expect = e3.cost + steer(d, c).cost
    assert tree.cost_to_come[i2] == pytest.approx(expect, rel=1e-10)
    assert tree.cost_to_come[i2] < old
    assert audit_tree(tree) == []


def test_try_connect_target_sets_incumbent():
    ctx = _ctx(OPEN)
    tree = new_tree(ctx)
    J = try_connect_target(tree, tree.root, ctx)
    assert J == pytest.approx(steer(START, GOAL).cost, rel=1e-10)
    assert tree.goal_ok[tree.root] and tree.best_leaf == tree.root
    edges = extract_trajectory(tree, ctx)
    assert len(edges) == 1
    np.testing.assert_allclose(edges[0].evaluate(edges[0].dt_star)[0][0], GOAL.vec, atol=1e-8)


def _manual_tree(costs, parents, heur):
    t = TrajectoryTree(START, GOAL, SteeringWeights())
    for c, p, h in zip(costs, parents, heur):
        t.add_node(np.zeros(12), p, c, 1.0, h, 1.0)
    return t


def test_prune_plain_rule():
    # 0 -> 1 -> 2 ; 0 -> 3 -> 4 ; node 2 reaches the goal
    t = _manual_tree([0, 1, 1, 5, 1], [-1, 0, 1, 0, 3], [3, 2, 1, 0, 0])
    t._goal_ok[2] = True
    assert t.refresh_best() and t.best_cost == 3.0
    ctx = _ctx(OPEN)
    removed = prune(t, t.best_cost, ctx)
    assert removed == 2
    assert list(t.alive_ids()) == [0, 1, 2]
    assert audit_tree(t, "plain") == []


def test_prune_informed_rule_keeps_unmasked_descendants():
    # node 1 is masked (1 + 9 > 4) but its child 2 is not (2 + 1 <= 4)
    t = _manual_tree([0, 1, 1, 1, 3], [-1, 0, 1, 0, 3], [4, 9, 1, 3, 5])
    t._goal_ok[0] = True
    t.refresh_best()
    assert t.best_cost == 4.0
    removed = prune(t, t.best_cost, _ctx(OPEN, informed_prune=True))
    assert removed == 1
    assert list(t.alive_ids()) == [0, 1, 2, 3]
    assert not t.mask[1] and t.mask[2]
    assert audit_tree(t, "informed") == []


def test_prune_keeps_best_chain_and_skips_infinite_incumbent():
    t = _manual_tree([0, 1, 1], [-1, 0, 1], [5, 5, 0])
    assert prune(t, np.inf, _ctx(OPEN)) == 0
    t._goal_ok[2] = True
    t.refresh_best()
    prune(t, t.best_cost, _ctx(OPEN))
    assert list(t.alive_ids()) == [0, 1, 2]


def test_audit_detects_corruption():
    t = _manual_tree([0, 1, 1], [-1, 0, 1], [0, 0, 0])
    assert audit_tree(t) == []
    t._ctc[2] += 1e-9
    assert any("additivity" in p for p in audit_tree(t))
    t._ctc[2] -= 1e-9
    t.children[1].remove(2)
    assert any("missing" in p or "unreachable" in p for p in audit_tree(t))


def test_degenerate_plan_start_equals_target():
    res = plan(_scenario(target=START), PlannerConfig(t_plan=5, max_samples=50))
    assert res.total_cost == 0.0 and res.travel_time == 0.0
    assert res.stats["samples"] == 0


def test_plan_edge_chain_and_determinism():
    cfg = PlannerConfig(t_plan=60, max_samples=300, seed=1, audit_every=5)
    a = plan(PILLAR, cfg)
    b = plan(PILLAR, cfg)
    assert json.dumps(tree_to_dict(a.tree)) == json.dumps(tree_to_dict(b.tree))
    assert a.total_cost == b.total_cost
    assert a.stats["audit_failures"] == []
    assert a.total_cost == pytest.approx(sum(e.cost for e in a.trajectory))
    ends = [e.evaluate([0.0, e.dt_star])[0] for e in a.trajectory]
    np.testing.assert_allclose(ends[0][0], PILLAR.start.vec, atol=1e-8)
    np.testing.assert_allclose(ends[-1][1], PILLAR.target.vec, atol=1e-8)
    for e1, e2 in zip(ends, ends[1:]):
        np.testing.assert_allclose(e1[1], e2[0], atol=1e-8)


def test_infeasible_endpoints():
    blocked = FlatState.rest([0.5, 0.5, 0.3])
    with pytest.raises(InfeasibleEndpoints):
        plan(_scenario([Aabb((0.4, 0.4, 0.0), (0.2, 0.2, 0.8))], target=blocked), PlannerConfig(max_samples=5))


def test_no_solution_carries_tree():
    wall = Aabb((0.5, 0.0, 0.0), (0.05, 1.0, 0.8))
    sc = _scenario([wall], FlatState.rest([0.2, 0.5, 0.3]), FlatState.rest([0.8, 0.5, 0.3]))
    with pytest.raises(NoSolutionFound) as info:
        plan(sc, PlannerConfig(max_samples=30))
    tree = info.value.tree
    assert tree.size >= 1 and not np.isfinite(tree.best_cost)
    with pytest.raises(NoSolution):
        extract_trajectory(tree, PlanningContext(sc))


def test_merge_self_and_incompatible():
    tree, ctx, _ = _grown(PILLAR, 300, seed=1)
    m = merge([tree, tree.copy()], ctx)
    assert m.best_cost == tree.best_cost
    assert m.size == tree.size
    other = new_tree(ctx, target=FlatState.rest([0.8, 0.8, 0.3]))
    with pytest.raises(IncompatibleTrees):
        merge([tree, other], ctx)
    with pytest.raises(IncompatibleTrees):
        merge([], ctx)


def test_merge_two_seeds_not_worse():
    ta, ctx, _ = _grown(PILLAR, 300, seed=1)
    tb, _, _ = _grown(PILLAR, 300, seed=4)
    m = merge([ta, tb], ctx)
    assert m.best_cost <= min(ta.best_cost, tb.best_cost)
    assert audit_tree(m, "plain") == []


def test_tree_dump_roundtrip(tmp_path):
    tree, ctx, _ = _grown(PILLAR, 300, seed=4)
    path = tmp_path / "tree.json"
    save_tree(tree, path)
    back = load_tree(path)
    assert back.size == tree.size
    assert back.best_cost == tree.best_cost
    assert audit_tree(back, "plain") == []
    assert json.dumps(tree_to_dict(back)) == json.dumps(tree_to_dict(tree))
    a = extract_trajectory(tree, ctx)
    b = extract_trajectory(back, ctx)
    assert [e.cost for e in a] == [e.cost for e in b]


def test_tree_dump_rejects_bad_input(tmp_path):
    tree, _, _ = _grown(OPEN, 5)
    d = tree_to_dict(tree)
    with pytest.raises(IncompatibleDump):
        tree_from_dict({"format": "other"})
    with pytest.raises(IncompatibleDump):
        tree_from_dict(dict(d, version=99))
    bad = json.loads(json.dumps(d))
    if len(bad["nodes"]) > 1:
        bad["nodes"][1]["parent"] = 1
        with pytest.raises(IncompatibleDump):
            tree_from_dict(bad)
    del bad["header"]
    with pytest.raises(IncompatibleDump):
        tree_from_dict(bad)
    p = tmp_path / "junk.json"
    p.write_text("{not json")
    with pytest.raises(IncompatibleDump):
        load_tree(p)


def test_replan_same_and_new_target():
    tree, ctx, _ = _grown(PILLAR, 300, seed=1)
    same = replan(tree, PILLAR.target, ctx)
    assert same.total_cost == pytest.approx(tree.best_cost)
    assert same.stats["connected_without_sampling"]
    new = FlatState.rest([0.75, 0.55, 0.3])
    ctx2 = PlanningContext(PILLAR, PlannerConfig(t_plan=30, replan_budget=0.0))
    res = replan(tree, new, ctx2)
    np.testing.assert_allclose(res.trajectory[-1].evaluate(res.trajectory[-1].dt_star)[0][0], new.vec, atol=1e-8)
    assert tree.target == PILLAR.target
    assert audit_tree(res.tree, "plain") == []

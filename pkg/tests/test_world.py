import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatplan.errors import DegenerateWorkspace, OutOfWorkspace
from flatplan.world import (
    Aabb,
    World,
    Workspace,
    brute_force_squared_edt,
    clearance,
    clearance_batch,
    clearance_correction,
    edge_collision_free,
    edt,
    path_collision_free,
    rasterize,
    squared_edt,
)
from flatplan.lqmt import FlatState

WS = Workspace((0, 0, 0), (1, 1, 1))
BOX = Aabb((0.4, 0.4, 0.0), (0.2, 0.2, 0.5))


def test_box_and_workspace_validation():
    with pytest.raises(ValueError):
        Aabb((0, 0, 0), (1, 0, 1))
    with pytest.raises(DegenerateWorkspace):
        Workspace((0, 0, 0), (1, 0, 1))
    with pytest.raises(DegenerateWorkspace):
        rasterize([], WS, resolution=0.0)


def test_box_distance_analytic():
    d = BOX.distance([[0.5, 0.5, 0.2], [0.0, 0.5, 0.2], [0.3, 0.3, 0.8]])
    np.testing.assert_allclose(d, [0.0, 0.4, np.sqrt(0.01 + 0.01 + 0.09)])


def test_rasterize_marks_voxel_centres_inside_box():
    g = rasterize([BOX], WS, 0.1)
    assert g.dims == (10, 10, 10)
    occ = np.argwhere(g.occupancy)
    centres = 0.05 + 0.1 * occ
    assert np.all(BOX.distance(centres) == 0.0)
    free = np.argwhere(~g.occupancy)
    assert np.all(BOX.distance(0.05 + 0.1 * free) > 0.0)
    # x and y centres 0.45, 0.55; z centres 0.05..0.45
    assert occ.shape[0] == 2 * 2 * 5


def test_squared_edt_empty_grid_is_sentinel():
    sq = squared_edt(np.zeros((4, 5, 6), dtype=bool))
    assert np.all(sq == sq.flat[0]) and sq.flat[0] > 10**18
    assert np.all(np.isinf(edt(rasterize([], WS, 0.25)).distance))


def test_squared_edt_matches_brute_force():
    rng = np.random.default_rng(0)
    for density in (0.001, 0.01, 0.1, 0.5):
        occ = rng.random((20, 20, 20)) < density
        np.testing.assert_array_equal(squared_edt(occ), brute_force_squared_edt(occ))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 9), st.integers(1, 9), st.integers(1, 9))
def test_property_edt_exact_on_anisotropic_grids(seed, nx, ny, nz):
    occ = np.random.default_rng(seed).random((nx, ny, nz)) < 0.15
    np.testing.assert_array_equal(squared_edt(occ), brute_force_squared_edt(occ))


def test_clearance_is_conservative_and_tight():
    field = edt(rasterize([BOX], WS, 0.01))
    rng = np.random.default_rng(1)
    P = rng.uniform(0, 1, (2000, 3))
    c, inside = clearance_batch(field, P)
    true = BOX.distance(P)
    assert inside.all()
    assert np.all(c <= true + 1e-12)
    assert np.all(c >= true - 2 * clearance_correction(0.01) - 1e-12)


def test_clearance_out_of_workspace():
    field = edt(rasterize([BOX], WS, 0.05))
    with pytest.raises(OutOfWorkspace):
        clearance(field, [1.5, 0.5, 0.5])
    assert clearance(field, [0.5, 0.5, 0.45]) == 0.0


def test_path_collision_free():
    field = edt(rasterize([BOX], WS, 0.01))
    through = np.array([[0.1, 0.5, 0.2], [0.9, 0.5, 0.2]])
    around = np.array([[0.1, 0.1, 0.2], [0.9, 0.1, 0.2]])
    over = np.array([[0.1, 0.5, 0.8], [0.9, 0.5, 0.8]])
    assert not path_collision_free(field, through, 0.05, 0.02)
    assert path_collision_free(field, around, 0.05, 0.02)
    assert path_collision_free(field, over, 0.05, 0.02)
    # vertices clear, segment blocked: bisection must catch it
    assert not path_collision_free(field, np.array([[0.1, 0.5, 0.3], [0.9, 0.5, 0.3]]), 0.0, 0.0)
    assert not path_collision_free(field, np.array([[1.2, 0.5, 0.5]]), 0.0, 0.0)


def test_edge_collision_free_on_samples():
    field = edt(rasterize([BOX], WS, 0.02))
    assert edge_collision_free(field, [], 0.05)
    samples = [(0.0, FlatState.rest([0.1, 0.1, 0.2]), None), (1.0, FlatState.rest([0.9, 0.1, 0.2]), None)]
    assert edge_collision_free(field, samples, 0.05)
    blocked = [(0.0, FlatState.rest([0.1, 0.5, 0.2]), None), (1.0, FlatState.rest([0.9, 0.5, 0.2]), None)]
    assert not edge_collision_free(field, blocked, 0.05)


def test_world_queries():
    w = World([BOX], WS, 0.02, margin=0.02)
    assert w.point_free([0.1, 0.1, 0.1], 0.05)
    assert not w.point_free([0.5, 0.5, 0.1], 0.05)
    assert not w.point_free([0.5, 0.5, 2.0], 0.0)
    assert w.path_free(np.array([[0.1, 0.1, 0.9], [0.9, 0.9, 0.9]]), 0.05)

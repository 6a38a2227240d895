import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatplan.crane import (
    ControlInput,
    CraneParams,
    CraneState,
    FeasibilityBounds,
    FlatSample,
    accelerations,
    bounds_ok_batch,
    check_bounds,
    coriolis_matrix,
    coriolis_times_qdot_batch,
    dynamics,
    energy,
    flat_inputs_batch,
    flat_states_batch,
    flat_to_configuration,
    flat_to_input,
    flat_to_state,
    gravity_vector,
    mass_matrix,
    mass_matrix_batch,
    payload_position,
    payload_position_batch,
)
from flatplan.errors import RopeInverted, RopeSlack
from flatplan.lqmt import FlatState, steer
from flatplan.sim import integrate

P = CraneParams()


def _edge_flat(t):
    sol = steer(FlatState.from_derivatives([0.2, 0.1, 0.4], [0.1, 0, 0]),
                FlatState.from_derivatives([0.5, 0.3, 0.3], [0, 0.05, 0], [0.1, 0, 0]))
    x, s = sol.evaluate(t)
    return np.hstack([x, s]), sol


def _random_states(n, seed, sway=0.3):
    rng = np.random.default_rng(seed)
    q = np.column_stack([
        rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(-0.5, 0.8, n),
        rng.uniform(-sway, sway, n), rng.uniform(-sway, sway, n),
    ])
    qd = rng.normal(0, 0.3, (n, 5))
    return q, qd


def test_params_validation():
    with pytest.raises(ValueError):
        CraneParams(m_payload=0.0)
    with pytest.raises(ValueError):
        CraneParams(h0=-1.0)
    with pytest.raises(ValueError):
        FeasibilityBounds(sway_max=0.0)
    with pytest.raises(ValueError):
        FeasibilityBounds(u_lo=(1.0, 0.0, 0.0), u_hi=(0.0, 1.0, 1.0))


def test_rest_state_maps_to_hanging_payload():
    fs = FlatSample([0.4, 0.2, 0.3])
    z = flat_to_state(fs, P)
    np.testing.assert_allclose(z.q, [0.4, 0.2, 0.3, 0.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(z.qdot, np.zeros(5))
    u = flat_to_input(fs, P)
    np.testing.assert_allclose(u.u, [0.0, 0.0, P.m_payload * P.gravity], atol=1e-12)


def test_zero_acceleration_gives_zero_sway_exactly():
    fs = FlatSample([0.1, 0.2, 0.3], d1=[0.3, -0.2, 0.1], d3=[0.5, 0.1, 0.2])
    q = flat_to_configuration(fs, P)
    assert q[3] == 0.0 and q[4] == 0.0


def test_rope_errors():
    with pytest.raises(RopeInverted):
        flat_to_configuration(FlatSample([0, 0, 0.3], d2=[0, 0, -2 * P.gravity]), P)
    with pytest.raises(RopeSlack):
        flat_to_configuration(FlatSample([0, 0, P.h0 + 0.1]), P)


def test_forward_kinematics_round_trip():
    rng = np.random.default_rng(0)
    n = 500
    F = np.zeros((n, 15))
    F[:, :3] = rng.uniform([0, 0, 0], [3, 1.2, 0.9], (n, 3))
    F[:, 3:] = rng.normal(0, 0.5, (n, 12))
    Z, valid = flat_states_batch(F, P)
    assert valid.all()
    np.testing.assert_allclose(payload_position_batch(Z[:, :5], P), F[:, :3], atol=1e-10)


def test_sway_angle_convention():
    a = np.array([0.3, -0.2, 0.1])
    q = flat_to_configuration(FlatSample([0, 0, 0.3], d2=a), P)
    t = a + [0, 0, P.gravity]
    assert q[4] == pytest.approx(np.arctan2(t[0], t[2]), abs=1e-15)
    assert q[3] == pytest.approx(np.arctan2(t[1], np.hypot(t[0], t[2])), abs=1e-15)


def test_chain_rule_matches_finite_differences():
    t = np.linspace(0.2, 2.0, 10)
    h = 1e-5
    F, sol = _edge_flat(t)
    t = t[t < sol.dt_star - 0.01]
    F = F[: t.size]
    Fp, _ = _edge_flat(t + h)
    Fm, _ = _edge_flat(t - h)
    _, _, Z, _ = flat_inputs_batch(F, P)
    Zp, _ = flat_states_batch(Fp, P)
    Zm, _ = flat_states_batch(Fm, P)
    np.testing.assert_allclose(Z[:, 5:], (Zp[:, :5] - Zm[:, :5]) / (2 * h), atol=1e-6)
    # second derivative of q from the chain-rule velocities
    from flatplan.crane import _flat_map
    _, _, qdd, _ = _flat_map(F, P, order=2)
    np.testing.assert_allclose(qdd, (Zp[:, 5:] - Zm[:, 5:]) / (2 * h), atol=1e-4)


def test_inverse_forward_dynamics_consistency():
    t = np.linspace(0.0, 1.5, 12)
    F, _ = _edge_flat(t)
    from flatplan.crane import _flat_map
    _, _, qdd, _ = _flat_map(F, P, order=2)
    U, residual, Z, valid = flat_inputs_batch(F, P)
    assert valid.all()
    np.testing.assert_allclose(residual, 0.0, atol=1e-10)
    for k in range(t.size):
        zd = dynamics(CraneState.from_z(Z[k]), ControlInput(U[k]), P)
        np.testing.assert_allclose(zd[5:], qdd[k], atol=1e-8)
        np.testing.assert_allclose(zd[:5], Z[k, 5:], atol=0)


def test_equilibrium_is_fixed_point():
    z = CraneState(np.array([0.5, 0.5, 0.2, 0.0, 0.0]), np.zeros(5))
    zd = dynamics(z, ControlInput([0.0, 0.0, P.m_payload * P.gravity]), P)
    np.testing.assert_allclose(zd, 0.0, atol=1e-14)


def test_mass_matrix_symmetric_positive_definite():
    q, _ = _random_states(1000, seed=1, sway=1.4)
    M = mass_matrix_batch(q, P)
    np.testing.assert_allclose(M, np.transpose(M, (0, 2, 1)), atol=1e-14)
    assert np.linalg.eigvalsh(M).min() > 0


def test_skew_symmetry_of_mdot_minus_2c():
    q, qd = _random_states(50, seed=2)
    rng = np.random.default_rng(3)
    h = 1e-6
    for k in range(50):
        Mdot = (mass_matrix(q[k] + h * qd[k], P) - mass_matrix(q[k] - h * qd[k], P)) / (2 * h)
        S = Mdot - 2 * coriolis_matrix(q[k], qd[k], P)
        x = rng.normal(size=5)
        assert abs(x @ S @ x) < 1e-7
        np.testing.assert_allclose(S, -S.T, atol=1e-7)


def test_coriolis_and_gravity_from_lagrangian():
    # gravity is the gradient of the potential, C qd matches the Christoffel form
    q, qd = _random_states(20, seed=4)
    h = 1e-6
    for k in range(20):
        pot = lambda qq: P.m_payload * P.gravity * payload_position(qq, P)[2]
        grad = np.array([(pot(q[k] + h * e) - pot(q[k] - h * e)) / (2 * h) for e in np.eye(5)])
        np.testing.assert_allclose(gravity_vector(q[k], P), grad, atol=1e-7)
        Mdot = (mass_matrix(q[k] + h * qd[k], P) - mass_matrix(q[k] - h * qd[k], P)) / (2 * h)
        dM = [(mass_matrix(q[k] + h * e, P) - mass_matrix(q[k] - h * e, P)) / (2 * h) for e in np.eye(5)]
        ref = Mdot @ qd[k] - 0.5 * np.array([qd[k] @ dMi @ qd[k] for dMi in dM])
        np.testing.assert_allclose(coriolis_times_qdot_batch(q[k][None], qd[k][None], P)[0], ref, atol=1e-7)


def test_accel_kernel_matches_linear_solve():
    q, qd = _random_states(200, seed=5)
    rng = np.random.default_rng(6)
    for k in range(200):
        u = rng.normal(0, 10, 3)
        rhs = np.concatenate([u, [0, 0]]) - coriolis_matrix(q[k], qd[k], P) @ qd[k] - gravity_vector(q[k], P)
        ref = np.linalg.solve(mass_matrix(q[k], P), rhs)
        np.testing.assert_allclose(accelerations(q[k], qd[k], u, P), ref, rtol=1e-11, atol=1e-11)


def test_energy_conserved_without_input():
    z0 = CraneState(np.array([0.0, 0.0, 0.3, 0.1, -0.15]), np.array([0.1, -0.1, 0.0, 0.05, 0.0]))
    res = integrate(z0, lambda t: np.zeros(3), P, 1e-4, 1.0)
    E = np.array([energy(res.state(k), P) for k in range(0, len(res.times), 100)])
    assert np.max(np.abs(E - E[0])) < 1e-6


def test_check_bounds_examples():
    b = FeasibilityBounds()
    z0 = CraneState(np.zeros(5), np.zeros(5))
    ok, rep = check_bounds(z0, ControlInput(np.zeros(3)), b)
    assert ok and rep == []
    tilted = CraneState(np.array([0, 0, 0, np.deg2rad(3.0), 0]), np.zeros(5))
    ok, rep = check_bounds(tilted, ControlInput(np.zeros(3)), b)
    assert not ok and [v.name for v in rep] == ["alpha_sway"]
    assert rep[0].margin == pytest.approx(np.deg2rad(1.0))
    edge = CraneState(np.array([0, 0, 0, b.sway_max, -b.sway_max]), np.array([0, 0, 0.3, 0, 0]))
    ok, _ = check_bounds(edge, ControlInput(b.u_hi), b)
    assert ok


def test_shrunk_bounds_are_nested():
    b = FeasibilityBounds()
    s = b.shrunk(0.02)
    assert all(lo2 > lo and hi2 < hi for lo, hi, lo2, hi2 in zip(b.z_lo, b.z_hi, s.z_lo, s.z_hi))
    assert s.sway_max < b.sway_max


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_property_batch_bounds_match_single(seed):
    rng = np.random.default_rng(seed)
    b = FeasibilityBounds()
    Z = rng.normal(0, 0.4, (20, 10)) * np.array([1, 1, 1, 0.05, 0.05, 1, 1, 1, 1, 1])
    U = rng.normal([0, 0, 10], 20, (20, 3))
    ok = bounds_ok_batch(Z, U, b)
    for k in range(20):
        assert ok[k] == check_bounds(CraneState.from_z(Z[k]), ControlInput(U[k]), b)[0]

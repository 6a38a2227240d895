"""Gantry crane model: flat parameterization, Euler-Lagrange dynamics, bounds.

Model
-----
Generalized coordinates ``q = [s_x, s_y, s_z, alpha, beta]``.  The rope
leaves the suspension point ``S = (s_x, s_y, h0)`` and has length
``l = h0 - s_z``; the payload (point mass) hangs at ``p = S - l * e(alpha, beta)``
with the unit rope direction (payload -> suspension)

    e = (sin(beta) cos(alpha), sin(alpha), cos(beta) cos(alpha)).

``beta`` is the rope angle in the zx-plane and ``alpha`` the angle in the
zy-plane.  Kinetic energy is ``1/2 (m_bridge + m_trolley) s_x'^2 +
1/2 m_trolley s_y'^2 + 1/2 m_payload |p'|^2``, potential energy
``m_payload g p_z``.  The drives act on ``s_x, s_y, s_z`` and the sway
coordinates are unactuated, so ``u_3`` is the rope tension.

All ``*_batch`` helpers operate on stacked samples (leading axis N).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numba
import numpy as np

from .errors import RopeInverted, RopeSlack, SingularMass, UnactuatedResidual

STATE_NAMES = (
    "s_x", "s_y", "s_z", "alpha", "beta",
    "ds_x", "ds_y", "ds_z", "dalpha", "dbeta",
)
INPUT_NAMES = ("u_1", "u_2", "u_3")


@dataclass(frozen=True)
class CraneParams:
    m_payload: float = 1.0
    m_trolley: float = 5.0
    m_bridge: float = 10.0
    h0: float = 1.0
    gravity: float = 9.81
    payload_radius: float = 0.05

    def __post_init__(self):
        if min(self.m_payload, self.m_trolley, self.m_bridge) <= 0:
            raise ValueError("masses must be positive")
        if self.h0 <= 0:
            raise ValueError("h0 must be positive")
        if self.payload_radius < 0:
            raise ValueError("payload_radius must be non-negative")

    @property
    def hoist_force(self) -> float:
        """Static rope tension holding the payload at rest."""
        return self.m_payload * self.gravity


@dataclass(frozen=True)
class CraneState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(5))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(5))

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_z(cls, z) -> "CraneState":
        z = np.asarray(z, dtype=float)
        return cls(z[:5], z[5:])


@dataclass(frozen=True)
class ControlInput:
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).reshape(3)
        if not np.all(np.isfinite(u)):
            raise ValueError("control input must be finite")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class FlatSample:
    """Payload position and its first four time derivatives."""

    p: np.ndarray
    d1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d3: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d4: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p", "d1", "d2", "d3", "d4"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    @classmethod
    def from_flat(cls, x, snap=(0.0, 0.0, 0.0)) -> "FlatSample":
        v = np.asarray(getattr(x, "vec", x), dtype=float)
        return cls(v[0:3], v[3:6], v[6:9], v[9:12], snap)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.p, self.d1, self.d2, self.d3, self.d4])[None, :]


def _default_z_lo():
    return (-10.0, -10.0, -1.0, -np.pi / 2, -np.pi / 2, -0.6, -0.6, -0.3, -1.0, -1.0)


def _default_z_hi():
    return (10.0, 10.0, 0.95, np.pi / 2, np.pi / 2, 0.6, 0.6, 0.3, 1.0, 1.0)


@dataclass(frozen=True)
class FeasibilityBounds:
    """Box bounds on the 10 crane states and 3 inputs plus the sway limit."""

    z_lo: Tuple[float, ...] = field(default_factory=_default_z_lo)
    z_hi: Tuple[float, ...] = field(default_factory=_default_z_hi)
    u_lo: Tuple[float, float, float] = (-30.0, -30.0, 0.0)
    u_hi: Tuple[float, float, float] = (30.0, 30.0, 60.0)
    sway_max: float = float(np.deg2rad(2.0))

    def __post_init__(self):
        for name, n in (("z_lo", 10), ("z_hi", 10), ("u_lo", 3), ("u_hi", 3)):
            val = tuple(float(x) for x in getattr(self, name))
            if len(val) != n:
                raise ValueError(f"{name} needs {n} entries")
            object.__setattr__(self, name, val)
        if not all(lo < hi for lo, hi in zip(self.z_lo + self.u_lo, self.z_hi + self.u_hi)):
            raise ValueError("bounds need lo < hi componentwise")
        if not self.sway_max > 0:
            raise ValueError("sway_max must be positive")

    @property
    def velocity_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Bounds on the actuated velocities (s_x', s_y', s_z')."""
        return np.asarray(self.z_lo[5:8]), np.asarray(self.z_hi[5:8])

    def shrunk(self, frac: float) -> "FeasibilityBounds":
        """Copy with every interval narrowed by ``frac`` of its half-width per side."""
        def pull(lo, hi):
            lo, hi = np.asarray(lo), np.asarray(hi)
            delta = frac * 0.5 * (hi - lo)
            return tuple(lo + delta), tuple(hi - delta)

        z_lo, z_hi = pull(self.z_lo, self.z_hi)
        u_lo, u_hi = pull(self.u_lo, self.u_hi)
        return FeasibilityBounds(z_lo, z_hi, u_lo, u_hi, self.sway_max * (1.0 - frac))


# ---------------------------------------------------------------------------
# flat parameterization


def _flat_map(F: np.ndarray, params: CraneParams, order: int = 2):
    """Configuration and its time derivatives from stacked flat samples.

    ``F`` has shape (N, 15): p, p', p'', p''', p''''.  Returns
    ``(q, qd, qdd, valid)`` where derivative arrays are None above ``order``
    and ``valid`` flags samples with an upright, non-slack rope.
    """
    p, d1, d2, d3, d4 = (F[:, 3 * k : 3 * k + 3] for k in range(5))
    g = params.gravity
    tx, ty, tz = d2[:, 0], d2[:, 1], d2[:, 2] + g
    h = params.h0 - p[:, 2]
    valid = (tz > 0) & (h > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho2 = tx * tx + tz * tz
        rho = np.sqrt(rho2)
        n2 = rho2 + ty * ty
        n = np.sqrt(n2)
        beta = np.arctan2(tx, tz)
        alpha = np.arctan2(ty, rho)
        mx, my = tx / tz, ty / tz
        k = n / tz
        l = h * k
        q = np.column_stack([p[:, 0] + h * mx, p[:, 1] + h * my, params.h0 - l, alpha, beta])
        if order < 1:
            return q, None, None, valid

        dtx, dty, dtz = d3[:, 0], d3[:, 1], d3[:, 2]
        dh = -d1[:, 2]
        Nb = tz * dtx - tx * dtz
        dbeta = Nb / rho2
        drho = (tx * dtx + tz * dtz) / rho
        Na = rho * dty - ty * drho
        dalpha = Na / n2
        Mx = dtx * tz - tx * dtz
        My = dty * tz - ty * dtz
        dmx, dmy = Mx / tz**2, My / tz**2
        tdt = tx * dtx + ty * dty + tz * dtz
        dn = tdt / n
        Nk = dn * tz - n * dtz
        dk = Nk / tz**2
        dl = dh * k + h * dk
        qd = np.column_stack([
            d1[:, 0] + dh * mx + h * dmx,
            d1[:, 1] + dh * my + h * dmy,
            -dl,
            dalpha,
            dbeta,
        ])
        if order < 2:
            return q, qd, None, valid

        ddtx, ddty, ddtz = d4[:, 0], d4[:, 1], d4[:, 2]
        ddh = -d2[:, 2]
        ddbeta = (tz * ddtx - tx * ddtz) / rho2 - 2.0 * Nb * drho / (rho2 * rho)
        ddrho = (dtx * dtx + dtz * dtz + tx * ddtx + tz * ddtz - drho * drho) / rho
        ddalpha = (rho * ddty - ty * ddrho) / n2 - 2.0 * Na * tdt / (n2 * n2)
        ddmx = (ddtx * tz - tx * ddtz) / tz**2 - 2.0 * Mx * dtz / tz**3
        ddmy = (ddty * tz - ty * ddtz) / tz**2 - 2.0 * My * dtz / tz**3
        ddn = (dtx * dtx + dty * dty + dtz * dtz + tx * ddtx + ty * ddty + tz * ddtz - dn * dn) / n
        ddk = (ddn * tz - n * ddtz) / tz**2 - 2.0 * Nk * dtz / tz**3
        ddl = ddh * k + 2.0 * dh * dk + h * ddk
        qdd = np.column_stack([
            d2[:, 0] + ddh * mx + 2.0 * dh * dmx + h * ddmx,
            d2[:, 1] + ddh * my + 2.0 * dh * dmy + h * ddmy,
            -ddl,
            ddalpha,
            ddbeta,
        ])
    return q, qd, qdd, valid


def _check_single(F: np.ndarray, params: CraneParams):
    d2z = F[0, 8]
    if not d2z + params.gravity > 0:
        raise RopeInverted("thrust vector points downward; rope cannot stay taut")
    if not params.h0 - F[0, 2] > 0:
        raise RopeSlack("payload at or above the suspension plane")


def flat_to_configuration(fs: FlatSample, params: CraneParams) -> np.ndarray:
    F = fs.stacked()
    _check_single(F, params)
    q, _, _, _ = _flat_map(F, params, order=0)
    return q[0]


def flat_to_state(fs: FlatSample, params: CraneParams) -> CraneState:
    F = fs.stacked()
    _check_single(F, params)
    q, qd, _, _ = _flat_map(F, params, order=1)
    return CraneState(q[0], qd[0])


def flat_to_input(fs: FlatSample, params: CraneParams, residual_tol: float = 1e-6) -> ControlInput:
    """Driving forces from inverse dynamics along the flat parameterization."""
    F = fs.stacked()
    _check_single(F, params)
    u, residual, _, _ = flat_inputs_batch(F, params)
    if np.max(np.abs(residual)) > residual_tol:
        raise UnactuatedResidual(f"sway rows of the Euler-Lagrange vector are {residual[0]}")
    return ControlInput(u[0])


def flat_states_batch(F: np.ndarray, params: CraneParams):
    """Crane states (N, 10) and validity mask for stacked flat samples."""
    q, qd, _, valid = _flat_map(F, params, order=1)
    return np.hstack([q, qd]), valid


def flat_inputs_batch(F: np.ndarray, params: CraneParams):
    """Inverse dynamics along stacked flat samples.

    Returns ``(u, residual, z, valid)``: actuated forces (N, 3), the two sway
    rows of ``M qdd + C qd + g`` which vanish for a consistent model, crane
    states (N, 10) and the validity mask.
    """
    q, qd, qdd, valid = _flat_map(F, params, order=2)
    with np.errstate(invalid="ignore"):
        tau = np.einsum("nij,nj->ni", mass_matrix_batch(q, params), qdd)
        tau += coriolis_times_qdot_batch(q, qd, params)
        tau += gravity_vector_batch(q, params)
    return tau[:, :3], tau[:, 3:], np.hstack([q, qd]), valid


# ---------------------------------------------------------------------------
# Euler-Lagrange model


def _rope_terms(q: np.ndarray):
    a, b = q[:, 3], q[:, 4]
    sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
    zero = np.zeros_like(a)
    e = np.stack([sb * ca, sa, cb * ca], axis=1)
    e_a = np.stack([-sb * sa, ca, -cb * sa], axis=1)
    e_b = np.stack([cb * ca, zero, -sb * ca], axis=1)
    e_aa = -e
    e_ab = np.stack([-cb * sa, zero, sb * sa], axis=1)
    e_bb = np.stack([-sb * ca, zero, -cb * ca], axis=1)
    return e, e_a, e_b, e_aa, e_ab, e_bb


def payload_position_batch(q: np.ndarray, params: CraneParams) -> np.ndarray:
    e = _rope_terms(q)[0]
    l = params.h0 - q[:, 2]
    S = np.column_stack([q[:, 0], q[:, 1], np.full(q.shape[0], params.h0)])
    return S - l[:, None] * e


def payload_position(q, params: CraneParams) -> np.ndarray:
    """Forward kinematics: payload centre of mass for configuration q."""
    return payload_position_batch(np.asarray(q, dtype=float)[None, :], params)[0]


def payload_jacobian_batch(q: np.ndarray, params: CraneParams) -> np.ndarray:
    """dp/dq, shape (N, 3, 5)."""
    e, e_a, e_b = _rope_terms(q)[:3]
    l = (params.h0 - q[:, 2])[:, None]
    N = q.shape[0]
    J = np.zeros((N, 3, 5))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    J[:, :, 2] = e
    J[:, :, 3] = -l * e_a
    J[:, :, 4] = -l * e_b
    return J


def payload_jacobian_rate_batch(q: np.ndarray, qd: np.ndarray, params: CraneParams) -> np.ndarray:
    """Time derivative of dp/dq along qd, shape (N, 3, 5)."""
    e, e_a, e_b, e_aa, e_ab, e_bb = _rope_terms(q)
    l = (params.h0 - q[:, 2])[:, None]
    dl = -qd[:, 2:3]
    da, db = qd[:, 3:4], qd[:, 4:5]
    de = e_a * da + e_b * db
    N = q.shape[0]
    Jd = np.zeros((N, 3, 5))
    Jd[:, :, 2] = de
    Jd[:, :, 3] = -dl * e_a - l * (e_aa * da + e_ab * db)
    Jd[:, :, 4] = -dl * e_b - l * (e_ab * da + e_bb * db)
    return Jd


def mass_matrix_batch(q: np.ndarray, params: CraneParams) -> np.ndarray:
    J = payload_jacobian_batch(q, params)
    M = params.m_payload * np.einsum("nki,nkj->nij", J, J)
    M[:, 0, 0] += params.m_bridge + params.m_trolley
    M[:, 1, 1] += params.m_trolley
    return M


def coriolis_matrix_batch(q: np.ndarray, qd: np.ndarray, params: CraneParams) -> np.ndarray:
    """C with M' - 2C skew-symmetric (payload term m J^T J')."""
    J = payload_jacobian_batch(q, params)
    Jd = payload_jacobian_rate_batch(q, qd, params)
    return params.m_payload * np.einsum("nki,nkj->nij", J, Jd)


def coriolis_times_qdot_batch(q: np.ndarray, qd: np.ndarray, params: CraneParams) -> np.ndarray:
    J = payload_jacobian_batch(q, params)
    Jd = payload_jacobian_rate_batch(q, qd, params)
    acc = np.einsum("nkj,nj->nk", Jd, qd)
    return params.m_payload * np.einsum("nki,nk->ni", J, acc)


def gravity_vector_batch(q: np.ndarray, params: CraneParams) -> np.ndarray:
    J = payload_jacobian_batch(q, params)
    return params.m_payload * params.gravity * J[:, 2, :]


def mass_matrix(q, params: CraneParams) -> np.ndarray:
    return mass_matrix_batch(np.asarray(q, dtype=float)[None, :], params)[0]


def coriolis_matrix(q, qd, params: CraneParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)[None, :]
    qd = np.asarray(qd, dtype=float)[None, :]
    return coriolis_matrix_batch(q, qd, params)[0]


def gravity_vector(q, params: CraneParams) -> np.ndarray:
    return gravity_vector_batch(np.asarray(q, dtype=float)[None, :], params)[0]


def energy(z: CraneState, params: CraneParams) -> float:
    """Kinetic plus potential energy."""
    q = z.q[None, :]
    M = mass_matrix_batch(q, params)[0]
    pz = payload_position_batch(q, params)[0, 2]
    return 0.5 * float(z.qdot @ M @ z.qdot) + params.m_payload * params.gravity * pz


@numba.njit(cache=True)
def _accel_kernel(q, qd, u, m_load, m_trolley, m_bridge, h0, grav):
    """M^-1([u; 0] - C qd - g) in closed form; returns (qdd, ok)."""
    a, b = q[3], q[4]
    sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
    l = h0 - q[2]
    dl = -qd[2]
    da, db = qd[3], qd[4]
    e = np.array([sb * ca, sa, cb * ca])
    e_a = np.array([-sb * sa, ca, -cb * sa])
    e_b = np.array([cb * ca, 0.0, -sb * ca])
    e_ab = np.array([-cb * sa, 0.0, sb * sa])
    e_bb = np.array([-sb * ca, 0.0, -cb * ca])
    J = np.zeros((3, 5))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    Jd = np.zeros((3, 5))
    for k in range(3):
        J[k, 2] = e[k]
        J[k, 3] = -l * e_a[k]
        J[k, 4] = -l * e_b[k]
        Jd[k, 2] = e_a[k] * da + e_b[k] * db
        Jd[k, 3] = -dl * e_a[k] - l * (-e[k] * da + e_ab[k] * db)
        Jd[k, 4] = -dl * e_b[k] - l * (e_ab[k] * da + e_bb[k] * db)
    M = m_load * (J.T @ J)
    M[0, 0] += m_bridge + m_trolley
    M[1, 1] += m_trolley
    acc = Jd @ qd
    rhs = -m_load * (J.T @ acc) - m_load * grav * J[2, :]
    for k in range(3):
        rhs[k] += u[k]
    # Cholesky solve
    L = np.zeros((5, 5))
    for i in range(5):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if not s > 0.0:
                    return np.zeros(5), False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.zeros(5)
    for i in range(5):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.zeros(5)
    for i in range(4, -1, -1):
        s = y[i]
        for k in range(i + 1, 5):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x, True


def model_constants(params: CraneParams):
    return (params.m_payload, params.m_trolley, params.m_bridge, params.h0, params.gravity)


def accelerations(q: np.ndarray, qd: np.ndarray, u: np.ndarray, params: CraneParams) -> np.ndarray:
    """Generalized accelerations M^-1([u; 0] - C qd - g) for one state."""
    qdd, ok = _accel_kernel(np.asarray(q, dtype=float), np.asarray(qd, dtype=float),
                            np.asarray(u, dtype=float), *model_constants(params))
    if not ok:
        raise SingularMass(f"mass matrix not positive definite at q={q}")
    return qdd


def dynamics(z: CraneState, u: ControlInput, params: CraneParams) -> np.ndarray:
    """State derivative [qd; qdd] of the crane."""
    uu = u.u if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    return np.concatenate([z.qdot, accelerations(z.q, z.qdot, uu, params)])


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class Violation:
    name: str
    value: float
    lo: float
    hi: float

    @property
    def margin(self) -> float:
        """Distance outside the admissible interval (positive when violated)."""
        return max(self.lo - self.value, self.value - self.hi)


def check_bounds(z: CraneState, u: ControlInput, b: FeasibilityBounds) -> Tuple[bool, List[Violation]]:
    """Closed-interval bound check with a per-component violation report."""
    zz = z.z
    uu = u.u if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    report = []
    for name, val, lo, hi in zip(STATE_NAMES, zz, b.z_lo, b.z_hi):
        if not lo <= val <= hi:
            report.append(Violation(name, float(val), lo, hi))
    for name, val in (("alpha", zz[3]), ("beta", zz[4])):
        if not abs(val) <= b.sway_max:
            report.append(Violation(f"{name}_sway", float(val), -b.sway_max, b.sway_max))
    for name, val, lo, hi in zip(INPUT_NAMES, uu, b.u_lo, b.u_hi):
        if not lo <= val <= hi:
            report.append(Violation(name, float(val), lo, hi))
    return not report, report


def bounds_ok_batch(Z: np.ndarray, U: np.ndarray, b: FeasibilityBounds) -> np.ndarray:
    """Row-wise closed-interval check; NaN rows count as violations."""
    ok = np.all((Z >= np.asarray(b.z_lo)) & (Z <= np.asarray(b.z_hi)), axis=1)
    ok &= np.all(np.abs(Z[:, 3:5]) <= b.sway_max, axis=1)
    ok &= np.all((U >= np.asarray(b.u_lo)) & (U <= np.asarray(b.u_hi)), axis=1)
    return ok


def edge_dynamically_feasible(F: np.ndarray, params: CraneParams, b: FeasibilityBounds) -> bool:
    """True iff every stacked flat sample maps to a bounded crane state/input."""
    u, _, Z, valid = flat_inputs_batch(F, params)
    if not valid.all():
        return False
    return bool(bounds_ok_batch(Z, u, b).all())

"""Linear-quadratic minimum-time (LQMT) steering for the flat crane model.

The flat model is a chain of four integrators per Cartesian axis
(position <- velocity <- acceleration <- jerk <- snap input), so the
state-transition matrix and the reachability Gramian are polynomials in the
transit time and everything below is closed form.  For a transit time ``T``
the per-axis Gramian block is

    G_ij(T) = T**(7 - i - j) * K_ij / r,   K_ij = 1 / ((3-i)! (3-j)! (7-i-j))

with ``i, j = 0..3`` indexing (position, velocity, acceleration, jerk).
Writing ``y_i = T**i * d_i`` for the boundary mismatch ``d``, the quadratic
part of the cost becomes ``r * T**-7 * y^T K^-1 y`` where ``y`` is a cubic
vector polynomial in ``T``.  The batch routines exploit this to scan and
polish the arrival time for many state pairs at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import List, Sequence, Tuple

import numba
import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .errors import (
    EmptyBracket,
    IllConditioned,
    NoFiniteCost,
    NonPositiveDuration,
    NonPositiveStep,
)

N_AXES = 3
N_ORDER = 4
N_STATE = N_AXES * N_ORDER

_K = np.array(
    [
        [1.0 / (factorial(3 - i) * factorial(3 - j) * (7 - i - j)) for j in range(N_ORDER)]
        for i in range(N_ORDER)
    ]
)
_K_CHOL = np.linalg.cholesky(_K)
_POW = np.arange(7)


class FlatState:
    """Flat-model state ``[p, v, a, j]`` (3 axes each) stored as one 12-vector."""

    __slots__ = ("vec",)

    def __init__(self, vec):
        v = np.array(vec, dtype=float).reshape(N_STATE)
        if not np.all(np.isfinite(v)):
            raise ValueError("flat state entries must be finite")
        v.setflags(write=False)
        self.vec = v

    @classmethod
    def from_derivatives(cls, p, v=(0.0, 0.0, 0.0), a=(0.0, 0.0, 0.0), j=(0.0, 0.0, 0.0)):
        return cls(np.concatenate([np.ravel(p), np.ravel(v), np.ravel(a), np.ravel(j)]))

    @classmethod
    def rest(cls, p):
        return cls.from_derivatives(p)

    @property
    def p(self) -> np.ndarray:
        return self.vec[0:3]

    @property
    def v(self) -> np.ndarray:
        return self.vec[3:6]

    @property
    def a(self) -> np.ndarray:
        return self.vec[6:9]

    @property
    def j(self) -> np.ndarray:
        return self.vec[9:12]

    def axis(self, k: int) -> np.ndarray:
        """Position, velocity, acceleration and jerk of one axis."""
        return self.vec[k::N_AXES]

    def __eq__(self, other):
        if not isinstance(other, FlatState):
            return NotImplemented
        return bool(np.array_equal(self.vec, other.vec))

    def __hash__(self):
        return hash(self.vec.tobytes())

    def __repr__(self):
        return f"FlatState(p={self.p.tolist()}, v={self.v.tolist()}, a={self.a.tolist()}, j={self.j.tolist()})"


@dataclass(frozen=True)
class SteeringWeights:
    """Diagonal of the input weight R, one entry per axis."""

    r: Tuple[float, float, float] = (0.1, 0.1, 0.1)

    def __post_init__(self):
        r = tuple(float(x) for x in self.r)
        if len(r) != N_AXES or not all(np.isfinite(x) and x > 0 for x in r):
            raise ValueError(f"weights must be 3 positive finite scalars, got {self.r!r}")
        object.__setattr__(self, "r", r)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.r)


@dataclass(frozen=True)
class SteeringBounds:
    """Search bracket for the arrival time."""

    dt_min: float = 1e-3
    dt_max: float = 60.0
    scan_samples: int = 512

    def __post_init__(self):
        if not (self.dt_min > 0):
            raise ValueError("dt_min must be positive")
        if self.scan_samples < 3:
            raise ValueError("scan_samples must be at least 3")


def _vec(x) -> np.ndarray:
    if isinstance(x, FlatState):
        return x.vec
    v = np.asarray(x, dtype=float).reshape(N_STATE)
    return v


def _transition_block(dt: float) -> np.ndarray:
    phi = np.eye(N_ORDER)
    for k in range(1, N_ORDER):
        phi += np.diag(np.full(N_ORDER - k, dt**k / factorial(k)), k)
    return phi


def state_transition(dt: float) -> np.ndarray:
    """exp(A dt) of the 12-state integrator chain (exact, A is nilpotent)."""
    if dt < 0:
        raise NonPositiveDuration(f"dt must be non-negative, got {dt}")
    return np.kron(_transition_block(float(dt)), np.eye(N_AXES))


def gramian(dt: float, w: SteeringWeights) -> np.ndarray:
    """Reachability Gramian G(t0, t0 + dt), block diagonal per axis."""
    if not dt > 0:
        raise NonPositiveDuration(f"dt must be positive, got {dt}")
    idx = np.arange(N_ORDER)
    powers = 7 - idx[:, None] - idx[None, :]
    block = dt ** powers.astype(float) * _K
    G = np.zeros((N_STATE, N_STATE))
    for k, r in enumerate(w.r):
        sel = idx * N_AXES + k
        G[np.ix_(sel, sel)] = block / r
    return G


def _factor_gramian(dt: float, w: SteeringWeights):
    G = gramian(dt, w)
    s = np.sqrt(np.diag(G))
    if not np.all(np.isfinite(s)) or np.any(s <= 0.0):
        raise IllConditioned(f"Gramian diagonal degenerate at dt={dt}")
    try:
        fac = cho_factor(G / np.outer(s, s), lower=True)
    except LinAlgError as exc:
        raise IllConditioned(f"Gramian factorization failed at dt={dt}") from exc
    return G, s, fac


def _solve_gramian(dt: float, w: SteeringWeights, d: np.ndarray) -> np.ndarray:
    _, s, fac = _factor_gramian(dt, w)
    sol = cho_solve(fac, d / s) / s
    if not np.all(np.isfinite(sol)):
        raise IllConditioned(f"Gramian solve non-finite at dt={dt}")
    return sol


def cost_at(x0, x1, dt: float, w: SteeringWeights) -> float:
    """LQMT cost ``dt + 1/2 d^T G^-1 d`` for a fixed transit time."""
    if not dt > 0:
        raise NonPositiveDuration(f"dt must be positive, got {dt}")
    x0, x1 = _vec(x0), _vec(x1)
    d = x1 - state_transition(dt) @ x0
    lam = _solve_gramian(dt, w, d)
    c = dt + 0.5 * float(d @ lam)
    if not np.isfinite(c):
        raise IllConditioned(f"non-finite cost at dt={dt}")
    return c


# ---------------------------------------------------------------------------
# batch machinery


def _mismatch_coeffs(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Coefficients of y_i(T) = T**i d_i(T); shape (N, axes, i, power)."""
    n = x0.shape[0]
    s0 = x0.reshape(n, N_ORDER, N_AXES).transpose(0, 2, 1)
    s1 = x1.reshape(n, N_ORDER, N_AXES).transpose(0, 2, 1)
    p0, v0, a0, j0 = (s0[..., i] for i in range(4))
    Y = np.zeros((n, N_AXES, N_ORDER, N_ORDER))
    Y[..., 0, 0] = s1[..., 0] - p0
    Y[..., 0, 1] = -v0
    Y[..., 0, 2] = -0.5 * a0
    Y[..., 0, 3] = -j0 / 6.0
    Y[..., 1, 1] = s1[..., 1] - v0
    Y[..., 1, 2] = -a0
    Y[..., 1, 3] = -0.5 * j0
    Y[..., 2, 2] = s1[..., 2] - a0
    Y[..., 2, 3] = -j0
    Y[..., 3, 3] = s1[..., 3] - j0
    return Y


def _whitened_coeffs(Y: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Coefficients of sqrt(r) L^-1 y(T) with K = L L^T; shape (N, axes, 4, power)."""
    n = Y.shape[0]
    flat = np.moveaxis(Y, 2, 0).reshape(N_ORDER, -1)
    Z = solve_triangular(_K_CHOL, flat, lower=True, check_finite=False)
    Z = np.moveaxis(Z.reshape(N_ORDER, n, N_AXES, N_ORDER), 0, 2)
    return Z * np.sqrt(r)[None, :, None, None]


def _cost_polynomial(Z: np.ndarray) -> np.ndarray:
    """Coefficients q_0..q_6 of F(T) = sum_axes r y^T K^-1 y; shape (N, 7)."""
    W = np.einsum("naim,naik->nmk", Z, Z)
    q = np.zeros((Z.shape[0], 7))
    for m in range(N_ORDER):
        for k in range(N_ORDER):
            q[:, m + k] += W[:, m, k]
    return q


def _cost_and_derivs(Z: np.ndarray, T: np.ndarray):
    """c(T), c'(T), c''(T) evaluated from the whitened coefficients."""
    P = T[:, None] ** np.arange(N_ORDER)[None, :]
    dP = np.zeros_like(P)
    dP[:, 1:] = P[:, :-1] * np.arange(1, N_ORDER)
    ddP = np.zeros_like(P)
    ddP[:, 2:] = P[:, :-2] * (np.arange(2, N_ORDER) * np.arange(1, N_ORDER - 1))
    z = np.einsum("naim,nm->nai", Z, P)
    dz = np.einsum("naim,nm->nai", Z, dP)
    ddz = np.einsum("naim,nm->nai", Z, ddP)
    F = np.einsum("nai,nai->n", z, z)
    dF = 2.0 * np.einsum("nai,nai->n", z, dz)
    ddF = 2.0 * (np.einsum("nai,nai->n", dz, dz) + np.einsum("nai,nai->n", z, ddz))
    Tm7 = T**-7
    c = T + 0.5 * F * Tm7
    dc = 1.0 + 0.5 * Tm7 * (dF - 7.0 * F / T)
    ddc = 0.5 * Tm7 * (ddF - 14.0 * dF / T + 56.0 * F / T**2)
    return c, dc, ddc


_GRIDS = {}


def _cost_only(Z: np.ndarray, T: np.ndarray) -> np.ndarray:
    """c(T) from the whitened coefficients (sum of squares, no cancellation)."""
    P = T[:, None] ** np.arange(N_ORDER)[None, :]
    z = np.matmul(Z, P[:, None, :, None])[..., 0]
    return T + 0.5 * np.sum(z * z, axis=(1, 2)) * T**-7


def _scan_grid(b: SteeringBounds) -> np.ndarray:
    key = (b.dt_min, b.dt_max, b.scan_samples)
    if key not in _GRIDS:
        _GRIDS[key] = np.geomspace(b.dt_min, b.dt_max, b.scan_samples)
    return _GRIDS[key]


@numba.njit(cache=True)
def _poly_eval(q, T):
    """c(T), c'(T), c''(T) with c = T + P(T) / (2 T**7) and P = sum q_k T**k."""
    P = 0.0
    dP = 0.0
    ddP = 0.0
    for k in range(6, -1, -1):
        ddP = ddP * T + 2.0 * dP
        dP = dP * T + P
        P = P * T + q[k]
    inv = 1.0 / T
    i7 = inv**7
    c = T + 0.5 * P * i7
    dc = 1.0 + 0.5 * i7 * (dP - 7.0 * P * inv)
    ddc = 0.5 * i7 * (ddP - 14.0 * dP * inv + 56.0 * P * inv * inv)
    return c, dc, ddc


@numba.njit(cache=True)
def _scan_and_polish(q, grid, grid_i7, t_best, t_star, finite):
    """Per pair: best grid point, then safeguarded Newton on dc/dT in the adjacent bracket."""
    n = q.shape[0]
    m = grid.size
    for i in range(n):
        qi = q[i]
        best = -1
        cbest = np.inf
        for j in range(m):
            T = grid[j]
            P = qi[6]
            for k in range(5, -1, -1):
                P = P * T + qi[k]
            c = T + 0.5 * P * grid_i7[j]
            if np.isfinite(c) and c < cbest:
                cbest = c
                best = j
        if best < 0:
            finite[i] = False
            t_best[i] = grid[0]
            t_star[i] = grid[0]
            continue
        finite[i] = True
        tb = grid[best]
        t_best[i] = tb
        t_star[i] = tb
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, m - 1)]
        _, gb, _ = _poly_eval(qi, tb)
        _, glo, _ = _poly_eval(qi, lo)
        _, ghi, _ = _poly_eval(qi, hi)
        if gb > 0.0 and glo < 0.0:
            a, b = lo, tb
        elif gb < 0.0 and ghi > 0.0:
            a, b = tb, hi
        else:
            continue
        t = 0.5 * (a + b)
        for _ in range(100):
            _, g, h = _poly_eval(qi, t)
            if g == 0.0:
                break
            if g < 0.0:
                a = t
            else:
                b = t
            nxt = t - g / h if h > 0.0 else 0.5 * (a + b)
            if not (nxt > a and nxt < b):
                nxt = 0.5 * (a + b)
            step = abs(nxt - t)
            t = nxt
            if step <= 1e-13 * t or b - a <= 1e-13 * b:
                break
        t_star[i] = t


def _optimal_times(Z: np.ndarray, b: SteeringBounds):
    """Global arrival-time minimizer over the bracket for each pair.

    A logarithmic grid scan picks the best point; the minimizer is then
    polished inside the neighbouring bracket and kept only if it is no worse.
    """
    if not b.dt_max > b.dt_min:
        raise EmptyBracket(f"empty bracket [{b.dt_min}, {b.dt_max}]")
    q = np.ascontiguousarray(_cost_polynomial(Z))
    n = q.shape[0]
    t_best, t_star = np.empty(n), np.empty(n)
    finite = np.empty(n, dtype=np.bool_)
    grid = _scan_grid(b)
    _scan_and_polish(q, grid, grid**-7.0, t_best, t_star, finite)
    with np.errstate(over="ignore", invalid="ignore"):
        c_star = _cost_only(Z, t_star)
        c_best = _cost_only(Z, t_best)
    worse = ~(c_star <= c_best)
    t_star = np.where(worse, t_best, t_star)
    c_star = np.where(worse, c_best, c_star)
    return t_star, c_star, finite


def steer_costs(x0s, x1s, w: SteeringWeights, b: SteeringBounds = SteeringBounds()):
    """Optimal (dt*, c*) for many pairs at once; coincident pairs give (0, 0).

    ``x0s`` and ``x1s`` broadcast against each other as (N, 12) arrays.
    Rows whose cost is non-finite over the whole bracket get ``inf``.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    x1s = np.atleast_2d(np.asarray(x1s, dtype=float))
    x0s, x1s = np.broadcast_arrays(x0s, x1s)
    n = x0s.shape[0]
    dt = np.zeros(n)
    cost = np.zeros(n)
    moving = ~np.all(x0s == x1s, axis=1)
    if moving.any():
        Z = _whitened_coeffs(_mismatch_coeffs(x0s[moving], x1s[moving]), w.array)
        t, c, finite = _optimal_times(Z, b)
        dt[moving] = np.where(finite, t, np.inf)
        cost[moving] = np.where(finite, c, np.inf)
    return dt, cost


def optimal_arrival_time(x0, x1, w: SteeringWeights, b: SteeringBounds = SteeringBounds()) -> float:
    """Minimizer of ``cost_at`` over ``[b.dt_min, b.dt_max]``.

    A logarithmic grid scan picks the best bracket, then dc/dT is driven to
    zero by safeguarded Newton iterations; boundary minima are returned as is.
    """
    x0, x1 = _vec(x0), _vec(x1)
    Z = _whitened_coeffs(_mismatch_coeffs(x0[None], x1[None]), w.array)
    t, _, finite = _optimal_times(Z, b)
    if not finite[0]:
        raise NoFiniteCost("cost is non-finite over the whole bracket")
    return float(t[0])


# ---------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class SteeringSolution:
    """One solved LQMT edge.

    Times are local to the edge: the edge starts at 0 and ends at
    ``dt_star``.  ``coeffs[n]`` holds, per axis, the polynomial coefficients of
    the n-th position derivative in normalized time ``s = t / dt_star``
    (already divided by ``dt_star**n``).
    """

    dt_star: float
    cost: float
    d_vec: np.ndarray
    costate_t1: np.ndarray
    endpoints: Tuple[FlatState, FlatState]
    weights: SteeringWeights
    coeffs: np.ndarray = field(repr=False)

    @property
    def x0(self) -> FlatState:
        return self.endpoints[0]

    @property
    def x1(self) -> FlatState:
        return self.endpoints[1]

    def evaluate(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """Flat states (M, 12) and snap inputs (M, 3) at local times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.dt_star == 0.0:
            return np.tile(self.x0.vec, (t.size, 1)), np.zeros((t.size, N_AXES))
        s = t / self.dt_star
        V = s[:, None] ** np.arange(8)[None, :]
        vals = np.einsum("mk,nak->nma", V, self.coeffs)
        states = vals[:4].transpose(1, 0, 2).reshape(t.size, N_STATE)
        return states, vals[4]

    def state(self, t: float) -> FlatState:
        return FlatState(self.evaluate(t)[0][0])

    def input(self, t: float) -> np.ndarray:
        return self.evaluate(t)[1][0]

    def sample(self, step: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Local times, states and snap inputs at ``0, step, ..., dt_star``."""
        if not step > 0:
            raise NonPositiveStep(f"step must be positive, got {step}")
        if self.dt_star == 0.0:
            times = np.zeros(1)
        else:
            n = int(np.ceil(self.dt_star / step - 1e-9))
            times = np.append(step * np.arange(max(n, 1)), self.dt_star)
        states, snap = self.evaluate(times)
        return times, states, snap


def _edge_coeffs(x0: np.ndarray, lam: np.ndarray, T: float, w: SteeringWeights) -> np.ndarray:
    """Normalized-time polynomial coefficients of p and its first four derivatives."""
    out = np.zeros((5, N_AXES, 8))
    one_minus_s = np.array([1.0, -1.0])
    for k, r in enumerate(w.r):
        # u(t) = R^-1 B^T exp(A^T (T - t)) G^-1 d, with G^-1 d = -lambda(t1)
        g = -lam[k::N_AXES]
        u = np.zeros(1)
        for i in range(N_ORDER):
            m = 3 - i
            term = npoly.polypow(one_minus_s, m) * (g[i] * T**m / factorial(m))
            u = npoly.polyadd(u, term)
        u = u / r
        p = npoly.polyint(u, m=4) * T**4
        base = np.array([x0[k], x0[3 + k] * T, x0[6 + k] * T**2 / 2.0, x0[9 + k] * T**3 / 6.0])
        p = npoly.polyadd(p, base)
        p = np.pad(p, (0, 8 - p.size))
        for n in range(5):
            dn = npoly.polyder(p, m=n) / T**n if n else p
            out[n, k, : dn.size] = dn
    return out


def _integral_basis() -> np.ndarray:
    """Row m: s-coefficients of the 4-fold integral (from 0) of (1 - s)**m / m!."""
    out = np.zeros((N_ORDER, 8))
    for m in range(N_ORDER):
        c = npoly.polyint(npoly.polypow([1.0, -1.0], m) / factorial(m), m=4)
        out[m, : c.size] = c
    return out


def _derivative_maps() -> np.ndarray:
    """D[n] maps s-coefficients of a degree-7 polynomial to those of its n-th derivative."""
    D = np.zeros((5, 8, 8))
    for k in range(8):
        e = np.zeros(8)
        e[k] = 1.0
        for n in range(5):
            d = npoly.polyder(e, m=n) if n else e
            D[n, : d.size, k] = d
    return D


_IBASIS = _integral_basis()
_DMAPS = _derivative_maps()
_K_INV = np.linalg.inv(_K)


def edge_coeffs_batch(x0s: np.ndarray, x1s: np.ndarray, T: np.ndarray, w: SteeringWeights) -> np.ndarray:
    """Batched edge polynomials, shape (N, 5, 3, 8), same layout as ``SteeringSolution.coeffs``.

    Uses an explicit inverse of the scaled Gramian, so it is meant for fast
    screening; ``solution_at`` remains the reference construction.
    """
    x0s, x1s = np.atleast_2d(x0s), np.atleast_2d(x1s)
    T = np.asarray(T, dtype=float)
    n = T.size
    s0 = x0s.reshape(n, N_ORDER, N_AXES).transpose(0, 2, 1)  # (N, axis, order)
    s1 = x1s.reshape(n, N_ORDER, N_AXES).transpose(0, 2, 1)
    Tc = T[:, None]
    drift = np.empty_like(s0)
    drift[..., 0] = s0[..., 0] + s0[..., 1] * Tc + s0[..., 2] * Tc**2 / 2 + s0[..., 3] * Tc**3 / 6
    drift[..., 1] = s0[..., 1] + s0[..., 2] * Tc + s0[..., 3] * Tc**2 / 2
    drift[..., 2] = s0[..., 2] + s0[..., 3] * Tc
    drift[..., 3] = s0[..., 3]
    d = s1 - drift
    # G^-1 = r D^-1 K^-1 D^-1 with D = diag(T**(3.5 - i))
    sc = T[:, None] ** (3.5 - np.arange(N_ORDER))[None, :]  # (N, 4)
    g = np.einsum("ij,naj->nai", _K_INV, d / sc[:, None, :]) / sc[:, None, :]
    g = g * w.array[None, :, None]
    # u(s) = (1/r) sum_i g_i T**(3-i) (1-s)**(3-i)/(3-i)!, integrated 4 times in s
    m = 3 - np.arange(N_ORDER)
    amp = g * T[:, None, None] ** (m + 4)[None, None, :] / w.array[None, :, None]
    P = np.einsum("nai,ik->nak", amp, _IBASIS[m])
    P[..., 0] += s0[..., 0]
    P[..., 1] += s0[..., 1] * T[:, None]
    P[..., 2] += s0[..., 2] * T[:, None] ** 2 / 2
    P[..., 3] += s0[..., 3] * T[:, None] ** 3 / 6
    out = np.einsum("djk,nak->ndaj", _DMAPS, P)
    out /= T[:, None, None, None] ** np.arange(5)[None, :, None, None]
    return out


def evaluate_coeffs(coeffs: np.ndarray, s: np.ndarray, orders=(0, 1, 2, 3, 4)) -> np.ndarray:
    """Evaluate batched coefficients (N, 5, 3, 8) at normalized times s (M,) -> (N, len(orders), M, 3)."""
    V = s[:, None] ** np.arange(8)[None, :]
    return np.einsum("mk,ndak->ndma", V, coeffs[:, list(orders)])


def steer(x0, x1, w: SteeringWeights = SteeringWeights(), b: SteeringBounds = SteeringBounds()) -> SteeringSolution:
    """Solve the free-final-time LQMT problem between two flat states."""
    x0v, x1v = _vec(x0), _vec(x1)
    if not (np.all(np.isfinite(x0v)) and np.all(np.isfinite(x1v))):
        raise ValueError("steering endpoints must be finite")
    ends = (FlatState(x0v), FlatState(x1v))
    if np.array_equal(x0v, x1v):
        zero = np.zeros(N_STATE)
        return SteeringSolution(0.0, 0.0, zero, zero, ends, w, np.zeros((5, N_AXES, 8)))
    return solution_at(x0v, x1v, optimal_arrival_time(x0v, x1v, w, b), w)


def solution_at(x0, x1, T: float, w: SteeringWeights = SteeringWeights()) -> SteeringSolution:
    """LQMT edge for a given duration ``T`` (the optimal one when chosen by a scan)."""
    x0v, x1v = _vec(x0), _vec(x1)
    ends = (FlatState(x0v), FlatState(x1v))
    if T == 0.0:
        if not np.array_equal(x0v, x1v):
            raise NonPositiveDuration("zero duration between distinct states")
        zero = np.zeros(N_STATE)
        return SteeringSolution(0.0, 0.0, zero, zero, ends, w, np.zeros((5, N_AXES, 8)))
    T = float(T)
    d = x1v - state_transition(T) @ x0v
    lam = -_solve_gramian(T, w, d)
    cost = T - 0.5 * float(d @ lam)
    return SteeringSolution(T, cost, d, lam, ends, w, _edge_coeffs(x0v, lam, T, w))


def sample_edge(sol: SteeringSolution, step: float, t0: float = 0.0) -> List[Tuple[float, FlatState, np.ndarray]]:
    """Samples ``(t, state, snap)`` at ``t0, t0+step, ...`` with the end always included."""
    times, states, snap = sol.sample(step)
    return [(t0 + float(t), FlatState(x), u) for t, x, u in zip(times, states, snap)]


def concatenate(edges: Sequence[SteeringSolution], step: float):
    """Sample a chain of edges on one global time axis.

    Interior junctions appear once; returns (times, states, snaps, edge index).
    """
    ts, xs, us, ids = [], [], [], []
    t_off = 0.0
    for i, e in enumerate(edges):
        t, x, u = e.sample(step)
        if i > 0:
            t, x, u = t[1:], x[1:], u[1:]
        ts.append(t + t_off)
        xs.append(x)
        us.append(u)
        ids.append(np.full(t.size, i))
        t_off += e.dt_star
    return np.concatenate(ts), np.vstack(xs), np.vstack(us), np.concatenate(ids)

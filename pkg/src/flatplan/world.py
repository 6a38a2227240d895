"""Static obstacle world: voxel rasterization, exact EDT, clearance queries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numba
import numpy as np

from .errors import DegenerateWorkspace, OutOfWorkspace

# squared-distance sentinel for "no obstacle on this line/grid"
_SQ_INF = np.int64(1) << 62
_EPS = 1e-9


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by its minimum corner and its [w, h, d] extents."""

    origin: Tuple[float, float, float]
    size: Tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "size", tuple(float(x) for x in self.size))
        if len(self.origin) != 3 or len(self.size) != 3:
            raise ValueError("boxes are 3-dimensional")
        if not all(s > 0 for s in self.size):
            raise ValueError("box extents must be positive")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.size)

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from points (N, 3) to the closed box (0 inside)."""
        P = np.atleast_2d(points)
        gap = np.maximum(np.maximum(self.lo - P, P - self.hi), 0.0)
        return np.sqrt(np.sum(gap * gap, axis=1))


@dataclass(frozen=True)
class Workspace:
    lo: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    hi: Tuple[float, float, float] = (3.0, 1.2, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(x) for x in self.lo))
        object.__setattr__(self, "hi", tuple(float(x) for x in self.hi))
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise DegenerateWorkspace(f"workspace needs lo < hi, got {self.lo} / {self.hi}")

    def contains(self, points) -> np.ndarray:
        P = np.atleast_2d(points)
        return np.all((P >= np.asarray(self.lo)) & (P <= np.asarray(self.hi)), axis=1)


@dataclass(frozen=True)
class VoxelGrid:
    lo: np.ndarray
    hi: np.ndarray
    resolution: float
    dims: Tuple[int, int, int]
    occupancy: np.ndarray

    def centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + (np.arange(self.dims[axis]) + 0.5) * self.resolution


@dataclass(frozen=True)
class DistanceField:
    """Exact distance from each voxel centre to the nearest occupied centre."""

    lo: np.ndarray
    hi: np.ndarray
    resolution: float
    dims: Tuple[int, int, int]
    distance: np.ndarray
    squared: np.ndarray

    @property
    def correction(self) -> float:
        return clearance_correction(self.resolution)

    def index(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest voxel indices (N, 3) and the inside-workspace mask."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.all((P >= self.lo - _EPS) & (P <= self.hi + _EPS), axis=1)
        idx = np.floor((P - self.lo) / self.resolution).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.dims) - 1)
        return idx, inside


def grid_dims(ws: Workspace, resolution: float) -> Tuple[int, int, int]:
    extent = np.asarray(ws.hi) - np.asarray(ws.lo)
    return tuple(int(n) for n in np.ceil(extent / resolution - _EPS))


def rasterize(obstacles: Iterable[Aabb], ws: Workspace, resolution: float = 0.01) -> VoxelGrid:
    """Occupancy grid: a voxel is occupied iff its centre lies in a (closed) box."""
    if not resolution > 0:
        raise DegenerateWorkspace("resolution must be positive")
    dims = grid_dims(ws, resolution)
    if min(dims) < 1:
        raise DegenerateWorkspace("workspace smaller than one voxel")
    lo = np.asarray(ws.lo)
    occ = np.zeros(dims, dtype=bool)
    for box in obstacles:
        # centre index i sits at lo + (i + 1/2) res; keep centres inside [box.lo, box.hi]
        first = np.ceil((box.lo - lo) / resolution - 0.5 - _EPS).astype(int)
        last = np.floor((box.hi - lo) / resolution - 0.5 + _EPS).astype(int)
        first = np.maximum(first, 0)
        last = np.minimum(last, np.asarray(dims) - 1)
        if np.any(last < first):
            continue
        occ[first[0] : last[0] + 1, first[1] : last[1] + 1, first[2] : last[2] + 1] = True
    occ.setflags(write=False)
    return VoxelGrid(lo, np.asarray(ws.hi), float(resolution), dims, occ)


@numba.njit(cache=True)
def _envelope_rows(f, out):
    """1-D squared EDT of each row of f (lower envelope of parabolas)."""
    n_rows, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for r in range(n_rows):
        row = f[r]
        k = -1
        for q in range(n):
            fq = row[q]
            if fq >= _SQ_INF:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            while True:
                p = v[k]
                s = ((fq + q * q) - (row[p] + p * p)) / (2.0 * (q - p))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        if k < 0:
            for q in range(n):
                out[r, q] = _SQ_INF
            continue
        j = 0
        for q in range(n):
            while z[j + 1] < q:
                j += 1
            d = q - v[j]
            out[r, q] = d * d + row[v[j]]


def _pass(sq: np.ndarray, axis: int) -> np.ndarray:
    moved = np.ascontiguousarray(np.moveaxis(sq, axis, -1))
    shape = moved.shape
    rows = moved.reshape(-1, shape[-1])
    out = np.empty_like(rows)
    _envelope_rows(rows, out)
    return np.moveaxis(out.reshape(shape), -1, axis)


def squared_edt(occupancy: np.ndarray) -> np.ndarray:
    """Exact squared distance (in voxel units) to the nearest occupied voxel."""
    sq = np.where(occupancy, np.int64(0), _SQ_INF).astype(np.int64)
    for axis in range(sq.ndim):
        sq = _pass(sq, axis)
    return np.ascontiguousarray(sq)


def distances_from_squared(sq: np.ndarray, resolution: float) -> np.ndarray:
    d = resolution * np.sqrt(sq.astype(np.float64))
    d[sq >= _SQ_INF] = np.inf
    return d


def edt(grid: VoxelGrid) -> DistanceField:
    """Exact Euclidean distance transform of an occupancy grid."""
    sq = squared_edt(grid.occupancy)
    dist = distances_from_squared(sq, grid.resolution)
    sq.setflags(write=False)
    dist.setflags(write=False)
    return DistanceField(grid.lo, grid.hi, grid.resolution, grid.dims, dist, sq)


def clearance_correction(resolution: float) -> float:
    # half a voxel diagonal from the query to its voxel centre, plus up to one
    # voxel diagonal between an obstacle surface and its nearest occupied centre
    return 1.5 * np.sqrt(3.0) * resolution


def clearance_batch(field: DistanceField, points) -> Tuple[np.ndarray, np.ndarray]:
    """Conservative clearances and the inside-workspace mask for many points."""
    idx, inside = field.index(points)
    d = field.distance[idx[:, 0], idx[:, 1], idx[:, 2]]
    return np.maximum(d - field.correction, 0.0), inside


def clearance(field: DistanceField, point) -> float:
    """Lower bound on the distance from ``point`` to the nearest obstacle."""
    c, inside = clearance_batch(field, np.asarray(point, dtype=float)[None, :])
    if not inside[0]:
        raise OutOfWorkspace(f"point {list(point)} outside the workspace")
    return float(c[0])


def path_collision_free(field: DistanceField, P: np.ndarray, radius: float, margin: float) -> bool:
    """Check a polyline of payload positions (M, 3) against the obstacles.

    Every vertex needs clearance >= radius + margin, and a positive
    clearance so that points inside obstacles never pass.  A segment is accepted
    when the two vertex clearance balls cover it; otherwise it is bisected
    until the pieces are shorter than the voxel resolution.
    """
    need = radius + margin
    clear, inside = clearance_batch(field, P)
    if not inside.all() or np.any(clear < need) or np.any(clear <= 0.0):
        return False
    if P.shape[0] < 2:
        return True
    slack = clear - need
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    todo = np.flatnonzero(seg > slack[:-1] + slack[1:])
    stack: List[Tuple[np.ndarray, np.ndarray, float, float]] = [
        (P[i], P[i + 1], slack[i], slack[i + 1]) for i in todo
    ]
    res = field.resolution
    while stack:
        a, b, sa, sb = stack.pop()
        length = float(np.linalg.norm(b - a))
        if length <= sa + sb or length < res:
            continue
        m = 0.5 * (a + b)
        cm, inside_m = clearance_batch(field, m[None, :])
        if not inside_m[0] or cm[0] < need or cm[0] <= 0.0:
            return False
        sm = float(cm[0]) - need
        stack.append((a, m, sa, sm))
        stack.append((m, b, sm, sb))
    return True


def edge_collision_free(field: DistanceField, samples: Sequence, payload_radius: float, margin: float = 0.02) -> bool:
    """Collision check for temporally ordered ``(t, FlatState, ...)`` samples."""
    if len(samples) == 0:
        return True
    P = np.array([np.asarray(getattr(s[1], "vec", s[1]))[:3] for s in samples])
    return path_collision_free(field, P, payload_radius, margin)


def brute_force_squared_edt(occupancy: np.ndarray) -> np.ndarray:
    """All-pairs squared distances to the nearest occupied voxel (for small grids)."""
    occ = np.argwhere(occupancy)
    cells = np.indices(occupancy.shape).reshape(3, -1).T
    if occ.size == 0:
        return np.full(occupancy.shape, _SQ_INF, dtype=np.int64)
    best = np.full(cells.shape[0], _SQ_INF, dtype=np.int64)
    for start in range(0, occ.shape[0], 128):
        chunk = occ[start : start + 128]
        diff = cells[:, None, :] - chunk[None, :, :]
        best = np.minimum(best, np.einsum("ijk,ijk->ij", diff, diff).min(axis=1))
    return best.reshape(occupancy.shape)


class World:
    """Obstacles, workspace and the derived distance field, built once."""

    def __init__(self, obstacles: Sequence[Aabb], workspace: Workspace, resolution: float = 0.01,
                 margin: float = 0.02):
        self.obstacles = list(obstacles)
        self.workspace = workspace
        self.resolution = float(resolution)
        self.margin = float(margin)
        self.grid = rasterize(self.obstacles, workspace, resolution)
        self.field = edt(self.grid)

    def point_free(self, p, radius: float) -> bool:
        c, inside = clearance_batch(self.field, np.asarray(p, dtype=float)[None, :])
        return bool(inside[0] and c[0] >= radius + self.margin and c[0] > 0.0)

    def path_free(self, P: np.ndarray, radius: float) -> bool:
        return path_collision_free(self.field, P, radius, self.margin)

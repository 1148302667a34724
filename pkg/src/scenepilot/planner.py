"""Grid path planning and timed trajectory generation.

A* runs on the occupancy grid with 8-connected moves (straight cost 1,
diagonal sqrt(2)) and an octile heuristic.  Grid paths become trajectories by
smoothing cell centers with two Chaikin passes, then resampling by arc length
so consecutive points sit exactly one control interval (0.1 s) apart at the
requested speed.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .geom import normalize_angle
from .scene import OccupancyGrid

TRAJ_DT = 0.1  # seconds between consecutive trajectory points
TRAJ_MAX_SPEED = 2.0  # m/s cap implied by point spacing

SQRT2 = math.sqrt(2.0)

# fixed neighbor order keeps expansion deterministic
_MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


class NoPathError(RuntimeError):
    """Goal is unreachable from the start cell."""


class InvalidEndpointError(ValueError):
    """Start or goal cell is blocked or outside the grid."""


@dataclass(frozen=True)
class GridPath:
    """Sequence of 8-adjacent free cells from start to goal."""

    cells: tuple

    def __post_init__(self):
        if not self.cells:
            raise ValueError("empty path")

    @property
    def cost(self) -> float:
        total = 0.0
        for (ax, ay), (bx, by) in zip(self.cells[:-1], self.cells[1:]):
            total += SQRT2 if (ax != bx and ay != by) else 1.0
        return total


def _octile(a, b) -> float:
    dx = abs(a[0] - b[0])
    dy = abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def astar(grid: OccupancyGrid, start, goal) -> GridPath:
    """Minimal-cost 8-connected path; ties broken by (f, h, cell index).

    Diagonal moves require both adjacent orthogonal cells free, so the path
    never cuts a corner an inflated footprint occupies.
    """
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    for name, cell in (("start", start), ("goal", goal)):
        if not grid.in_grid(cell):
            raise InvalidEndpointError(f"{name} cell {cell} outside grid")
        if grid.blocked(cell):
            raise InvalidEndpointError(f"{name} cell {cell} is blocked")
    if start == goal:
        return GridPath((start,))

    nx, ny = grid.shape
    g = np.full((nx, ny), np.inf)
    g[start] = 0.0
    came_from = {}
    closed = np.zeros((nx, ny), dtype=bool)
    h0 = _octile(start, goal)
    heap = [(h0, h0, start[0] * ny + start[1], start)]
    while heap:
        f, h, _, cell = heapq.heappop(heap)
        if closed[cell]:
            continue
        if cell == goal:
            path = [cell]
            while path[-1] != start:
                path.append(came_from[path[-1]])
            return GridPath(tuple(reversed(path)))
        closed[cell] = True
        cx, cy = cell
        for dx, dy in _MOVES:
            nb = (cx + dx, cy + dy)
            if not grid.in_grid(nb) or grid.blocked(nb) or closed[nb]:
                continue
            if dx != 0 and dy != 0:
                if grid.blocked((cx + dx, cy)) or grid.blocked((cx, cy + dy)):
                    continue
                move = SQRT2
            else:
                move = 1.0
            cand = g[cell] + move
            if cand < g[nb] - 1e-12:
                g[nb] = cand
                came_from[nb] = cell
                hn = _octile(nb, goal)
                heapq.heappush(heap, (cand + hn, hn, nb[0] * ny + nb[1], nb))
    raise NoPathError(f"no path from {start} to {goal}")


def dijkstra_cost(grid: OccupancyGrid, start, goal) -> float:
    """Reference shortest-path cost over the same move set (no heuristic)."""
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    nx, ny = grid.shape
    dist = np.full((nx, ny), np.inf)
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, cell = heapq.heappop(heap)
        if d > dist[cell]:
            continue
        if cell == goal:
            return d
        cx, cy = cell
        for dx, dy in _MOVES:
            nb = (cx + dx, cy + dy)
            if not grid.in_grid(nb) or grid.blocked(nb):
                continue
            if dx != 0 and dy != 0:
                if grid.blocked((cx + dx, cy)) or grid.blocked((cx, cy + dy)):
                    continue
                move = SQRT2
            else:
                move = 1.0
            cand = d + move
            if cand < dist[nb]:
                dist[nb] = cand
                heapq.heappush(heap, (cand, nb))
    raise NoPathError(f"no path from {start} to {goal}")


def chaikin(points: np.ndarray, passes: int = 2,
            grid: OccupancyGrid = None) -> np.ndarray:
    """Corner-cutting smoothing, keeping endpoints.

    Each pass replaces interior corners with quarter-point pairs.  When a grid
    is given, any new point landing on a blocked cell falls back to the
    nearer original vertex, so smoothing never introduces a collision.
    """
    pts = np.asarray(points, dtype=float)
    for _ in range(passes):
        if len(pts) < 3:
            break
        q = 0.75 * pts[:-1] + 0.25 * pts[1:]
        r = 0.25 * pts[:-1] + 0.75 * pts[1:]
        if grid is not None:
            for i in range(len(q)):
                if grid.blocked(grid.world_to_cell(q[i])):
                    q[i] = pts[i]
                if grid.blocked(grid.world_to_cell(r[i])):
                    r[i] = pts[i + 1]
        mid = np.empty((2 * len(q), 2))
        mid[0::2] = q
        mid[1::2] = r
        pts = np.vstack([pts[:1], mid, pts[-1:]])
    return pts


def resample_by_arclength(points: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline at uniform arc-length spacing, keeping the endpoint.

    The final sample is the exact last input point; when total length is not
    a multiple of `spacing` the last interval is shorter.
    """
    pts = np.asarray(points, dtype=float)
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total < 1e-12:
        return np.vstack([pts[0], pts[0]])
    n_whole = int(math.floor(total / spacing + 1e-9))
    targets = np.arange(n_whole + 1) * spacing
    xs = np.interp(targets, s, pts[:, 0])
    ys = np.interp(targets, s, pts[:, 1])
    out = np.stack([xs, ys], axis=1)
    if total - targets[-1] > 1e-9:
        out = np.vstack([out, pts[-1]])
    else:
        out[-1] = pts[-1]
    return out


@dataclass(frozen=True)
class Trajectory:
    """Timestamped 2D points at a fixed 0.1 s interval.

    Immutable after construction; all queries interpolate linearly and clamp
    past the final point.
    """

    points: np.ndarray  # (M, 2)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"need (M>=2, 2) points, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("non-finite trajectory points")
        step = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if (step > TRAJ_MAX_SPEED * TRAJ_DT + 1e-9).any():
            raise ValueError("point spacing implies speed above the cap")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def duration(self) -> float:
        return (len(self.points) - 1) * TRAJ_DT

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.points)) * TRAJ_DT

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def query(self, t) -> np.ndarray:
        """Interpolated position at time(s) t; clamps to [0, duration]."""
        t = np.asarray(t, dtype=float)
        u = np.clip(t / TRAJ_DT, 0.0, len(self.points) - 1.0)
        i0 = np.minimum(np.floor(u).astype(int), len(self.points) - 2)
        frac = (u - i0)[..., None]
        return (1.0 - frac) * self.points[i0] + frac * self.points[i0 + 1]

    def query_window(self, t, count: int = 10) -> np.ndarray:
        """`count` future points spaced TRAJ_DT apart starting at time t.

        Scalar t gives (count, 2); an (N,) array gives (N, count, 2).
        """
        t = np.asarray(t, dtype=float)
        offsets = np.arange(count) * TRAJ_DT
        return self.query(t[..., None] + offsets)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y"])
            for t, (x, y) in zip(self.times, self.points):
                writer.writerow([repr(float(t)), repr(float(x)), repr(float(y))])

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        """Read `t,x,y` rows; off-grid timestamps resample onto the 0.1 s grid."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["t", "x", "y"]:
                raise ValueError(f"expected header t,x,y, got {header}")
            rows = [(float(t), float(x), float(y)) for t, x, y in reader]
        if len(rows) < 2:
            raise ValueError("need at least two trajectory rows")
        ts = np.array([r[0] for r in rows])
        pts = np.array([[r[1], r[2]] for r in rows])
        if (np.diff(ts) <= 0.0).any():
            raise ValueError("timestamps must increase")
        on_grid = np.allclose(ts, np.arange(len(ts)) * TRAJ_DT, atol=1e-6)
        if not on_grid:
            grid_ts = np.arange(int(math.floor(ts[-1] / TRAJ_DT + 1e-9)) + 1) * TRAJ_DT
            pts = np.stack([np.interp(grid_ts, ts, pts[:, 0]),
                            np.interp(grid_ts, ts, pts[:, 1])], axis=1)
        return cls(points=pts)


def path_to_trajectory(path: GridPath, speed: float, grid: OccupancyGrid) -> Trajectory:
    """Smooth a grid path and time it at constant speed."""
    if not 0.0 < speed <= TRAJ_MAX_SPEED:
        raise ValueError(f"speed must be in (0, {TRAJ_MAX_SPEED}], got {speed}")
    centers = np.array([grid.cell_center(c) for c in path.cells], dtype=float)
    if len(centers) == 1:
        centers = np.vstack([centers, centers])
    smooth = chaikin(centers, passes=2, grid=grid)
    return Trajectory(points=resample_by_arclength(smooth, speed * TRAJ_DT))


def generate_training_trajectory(rng: np.random.Generator, bounds,
                                 margin: float = 1.0) -> Trajectory:
    """Random smoothed trajectory for follow training.

    Draws 3-6 waypoints with turns of at most 90 degrees, a speed in
    [1.0, 1.5] m/s, and a duration in [8, 12] s, steering away from the
    bounds.  Smoothing shortens the polyline slightly, so draws whose final
    duration falls outside [8, 12] s are rejected and redrawn.
    """
    xmin, ymin, xmax, ymax = bounds
    if xmax - xmin <= 2 * margin or ymax - ymin <= 2 * margin:
        raise ValueError("bounds too small for the requested margin")
    lo = np.array([xmin + margin, ymin + margin])
    hi = np.array([xmax - margin, ymax - margin])
    center = 0.5 * (lo + hi)

    for _ in range(200):
        speed = rng.uniform(1.0, 1.5)
        duration = rng.uniform(8.0, 12.0)
        n_way = int(rng.integers(3, 7))
        seg_len = speed * duration / (n_way - 1)
        pts = [rng.uniform(lo, hi)]
        heading = rng.uniform(-math.pi, math.pi)
        ok = True
        for k in range(n_way - 1):
            cand = heading if k == 0 else heading + rng.uniform(-math.pi / 2, math.pi / 2)
            for _ in range(20):
                nxt = pts[-1] + seg_len * np.array([math.cos(cand), math.sin(cand)])
                if (lo <= nxt).all() and (nxt <= hi).all():
                    break
                # steer toward the interior, still within the 90-degree turn cap
                dx, dy = center - pts[-1]
                to_center = math.atan2(dy, dx)
                turn = normalize_angle(to_center + rng.uniform(-math.pi / 4, math.pi / 4)
                                       - heading)
                cand = heading + float(np.clip(turn, -math.pi / 2, math.pi / 2))
            else:
                ok = False
                break
            pts.append(nxt)
            heading = cand
        if not ok:
            continue
        smooth = chaikin(np.asarray(pts), passes=2)
        traj = Trajectory(points=resample_by_arclength(smooth, speed * TRAJ_DT))
        if 8.0 - 1e-9 <= traj.duration <= 12.0 + 1e-9:
            return traj
    raise RuntimeError("could not generate an in-bounds trajectory; bounds too tight")

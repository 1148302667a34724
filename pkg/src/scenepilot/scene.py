"""Scene model: interactable objects, static obstacles, and occupancy grids.

Objects are parametric boxes-with-a-seat-plane instead of meshes: the oriented
bounding box carries overall shape, `seat_height` marks the top of the seat
surface, and the sit target sits 10 cm above the center of that surface.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geom import OrientedBox, footprint_distance, normalize_angle

CATEGORIES = ("chair", "stool", "sofa", "bed")

# Clearance added above the seat surface when placing the sit/lie target.
SIT_TARGET_CLEARANCE = 0.10

# Per-category procedural size ranges (meters).  Implementation constants for
# generating train/test object pools; not measured values.
_SIZE_RANGES = {
    #          seat height   half-x        half-y        total height
    "chair": ((0.40, 0.50), (0.22, 0.28), (0.22, 0.28), (0.75, 0.95)),
    "stool": ((0.35, 0.45), (0.15, 0.22), (0.15, 0.22), None),
    "sofa": ((0.38, 0.46), (0.70, 1.10), (0.40, 0.52), (0.70, 0.90)),
    "bed": ((0.45, 0.55), (0.80, 1.00), (0.60, 0.75), None),
}


class SceneFormatError(ValueError):
    """Raised on malformed scene JSON (missing, extra, or invalid keys)."""


@dataclass
class ObjectInstance:
    """An interactable object: box shape, facing direction, and sit target.

    `facing` is the horizontal unit vector the seated character faces (away
    from the backrest); `sit_target` is 10 cm above the seat-surface center.
    """

    id: str
    category: str
    box: OrientedBox
    seat_height: float
    facing: np.ndarray = field(default=None)
    sit_target: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.facing is None:
            self.facing = np.array([math.cos(self.box.yaw), math.sin(self.box.yaw)])
        self.facing = np.asarray(self.facing, dtype=float).reshape(2)
        n = np.linalg.norm(self.facing)
        if not np.isclose(n, 1.0, atol=1e-6):
            raise ValueError(f"facing must be a unit vector, |facing|={n}")
        expected = np.array(
            [self.box.center[0], self.box.center[1], self.seat_height + SIT_TARGET_CLEARANCE]
        )
        if self.sit_target is None:
            self.sit_target = expected
        self.sit_target = np.asarray(self.sit_target, dtype=float).reshape(3)
        if not np.allclose(self.sit_target, expected, atol=1e-9):
            raise ValueError("sit_target must be 10 cm above the seat-surface center")

    def moved(self, center_xy, yaw: float) -> "ObjectInstance":
        """Copy of this object at a new planar pose; derived fields recomputed."""
        center = np.array([center_xy[0], center_xy[1], self.box.center[2]])
        box = OrientedBox(center, normalize_angle(yaw), self.box.half_extents.copy())
        return ObjectInstance(id=self.id, category=self.category, box=box,
                              seat_height=self.seat_height)


@dataclass
class Scene:
    """Immutable world model: objects, obstacles, and rectangular bounds."""

    objects: list
    obstacles: list
    bounds: tuple  # (xmin, ymin, xmax, ymax)

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"degenerate scene bounds {self.bounds}")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate object ids in scene: {ids}")
        for obj in self.objects:
            if not footprint_in_bounds(obj.box, self.bounds):
                raise ValueError(f"object {obj.id!r} footprint outside scene bounds")

    def object_by_id(self, object_id: str) -> ObjectInstance:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(f"no object with id {object_id!r}")

    def blocking_boxes(self, exclude_ids=()) -> list:
        """Obstacles plus footprints of all objects not in `exclude_ids`."""
        boxes = list(self.obstacles)
        boxes.extend(o.box for o in self.objects if o.id not in exclude_ids)
        return boxes


def footprint_in_bounds(box: OrientedBox, bounds) -> bool:
    from .geom import box_vertices

    xmin, ymin, xmax, ymax = bounds
    v = box_vertices(box)
    return bool(
        (v[:, 0] >= xmin).all() and (v[:, 0] <= xmax).all()
        and (v[:, 1] >= ymin).all() and (v[:, 1] <= ymax).all()
    )


@dataclass
class OccupancyGrid:
    """Boolean occupancy over a regular grid; True marks a blocked cell.

    cells[ix, iy] covers the square with center origin + (ix+0.5, iy+0.5)*cell.
    """

    cell_size: float
    origin: np.ndarray  # (2,) world position of the grid's min corner
    cells: np.ndarray  # (nx, ny) bool

    @property
    def shape(self):
        return self.cells.shape

    def world_to_cell(self, xy) -> tuple:
        ix = int(math.floor((xy[0] - self.origin[0]) / self.cell_size))
        iy = int(math.floor((xy[1] - self.origin[1]) / self.cell_size))
        return ix, iy

    def cell_center(self, cell) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) * self.cell_size

    def in_grid(self, cell) -> bool:
        ix, iy = cell
        return 0 <= ix < self.cells.shape[0] and 0 <= iy < self.cells.shape[1]

    def blocked(self, cell) -> bool:
        return bool(self.cells[cell[0], cell[1]])

    def clear_disk(self, xy, radius: float) -> None:
        """Force-free all cells whose centers lie within radius of a point.

        Used to open up planner endpoints that fall inside an inflated
        footprint (e.g. the standing point right in front of a target seat).
        """
        xs, ys = self._center_mesh()
        mask = (xs - xy[0]) ** 2 + (ys - xy[1]) ** 2 <= radius**2
        self.cells[mask] = False

    def _center_mesh(self):
        nx, ny = self.cells.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys, indexing="ij")


def rasterize(scene: Scene, cell_size: float, inflation: float,
              exclude_ids=()) -> OccupancyGrid:
    """Derive an occupancy grid from a scene.

    A cell is blocked iff its center lies within `inflation` (Euclidean
    distance) of any obstacle footprint or any object footprint whose id is
    not excluded.  Excluding the current interaction target lets planners
    route the character right up to it.
    """
    if cell_size <= 0.0:
        raise ValueError("cell_size must be positive")
    xmin, ymin, xmax, ymax = scene.bounds
    nx = max(1, int(math.ceil((xmax - xmin) / cell_size)))
    ny = max(1, int(math.ceil((ymax - ymin) / cell_size)))
    origin = np.array([xmin, ymin])
    grid = OccupancyGrid(cell_size, origin, np.zeros((nx, ny), dtype=bool))
    xs, ys = grid._center_mesh()
    centers = np.stack([xs, ys], axis=-1)
    for box in scene.blocking_boxes(exclude_ids):
        grid.cells |= footprint_distance(box, centers) <= inflation
    return grid


def randomize_object(obj: ObjectInstance, rng: np.random.Generator,
                     distance_range, full_yaw: bool = True,
                     bounds=None, max_tries: int = 1000) -> ObjectInstance:
    """Place an object at a uniform distance from the origin with random yaw.

    Distance is uniform in `distance_range`, placement angle uniform on the
    circle; yaw uniform when `full_yaw` else kept.  With `bounds`, placements
    are resampled until the footprint fits.
    """
    lo, hi = distance_range
    if not (0.0 < lo <= hi):
        raise ValueError(f"invalid distance range {distance_range}")
    for _ in range(max_tries):
        d = rng.uniform(lo, hi)
        phi = rng.uniform(-math.pi, math.pi)
        yaw = rng.uniform(-math.pi, math.pi) if full_yaw else obj.box.yaw
        moved = obj.moved((d * math.cos(phi), d * math.sin(phi)), yaw)
        if bounds is None or footprint_in_bounds(moved.box, bounds):
            return moved
    raise RuntimeError(f"could not place object {obj.id!r} inside bounds after {max_tries} tries")


def make_object(category: str, rng: np.random.Generator, object_id: str,
                center_xy=(0.0, 0.0), yaw: float = 0.0) -> ObjectInstance:
    """Sample a procedural object of a category from its default size ranges."""
    if category not in _SIZE_RANGES:
        raise ValueError(f"unknown category {category!r}")
    seat_r, hx_r, hy_r, height_r = _SIZE_RANGES[category]
    seat = rng.uniform(*seat_r)
    hx = rng.uniform(*hx_r)
    hy = rng.uniform(*hy_r)
    # stools and beds have no backrest: the box top is the seat surface
    height = seat if height_r is None else rng.uniform(*height_r)
    center = np.array([center_xy[0], center_xy[1], height / 2.0])
    box = OrientedBox(center, yaw, np.array([hx, hy, height / 2.0]))
    return ObjectInstance(id=object_id, category=category, box=box, seat_height=seat)


def object_pool(rng: np.random.Generator, per_category: int,
                categories=("chair", "stool", "sofa"), prefix: str = "obj") -> list:
    """Procedural pool with `per_category` objects per listed category."""
    pool = []
    for cat in categories:
        for k in range(per_category):
            pool.append(make_object(cat, rng, f"{prefix}_{cat}_{k}"))
    return pool


def train_test_pools(rng: np.random.Generator, train_per_category: int = 30,
                     test_per_category: int = 10,
                     categories=("chair", "stool", "sofa")) -> tuple:
    """Disjoint procedural train/test pools (30/10 per category by default)."""
    train = object_pool(rng, train_per_category, categories, prefix="train")
    test = object_pool(rng, test_per_category, categories, prefix="test")
    return train, test


# ---------------------------------------------------------------------------
# Scene JSON serialization.  Parsing is strict: unknown keys are rejected so
# typos in hand-written scene files fail loudly.

_SCENE_KEYS = {"bounds", "objects", "obstacles"}
_OBJECT_KEYS = {"id", "category", "center", "yaw", "extents", "seat_height"}
_OBSTACLE_KEYS = {"center", "yaw", "extents"}


def _require_keys(d: dict, allowed: set, context: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise SceneFormatError(f"unknown keys {sorted(extra)} in {context}")
    missing = allowed - set(d)
    if missing:
        raise SceneFormatError(f"missing keys {sorted(missing)} in {context}")


def object_to_dict(o: ObjectInstance) -> dict:
    return {
        "id": o.id,
        "category": o.category,
        "center": o.box.center.tolist(),
        "yaw": o.box.yaw,
        "extents": o.box.half_extents.tolist(),
        "seat_height": o.seat_height,
    }


def object_from_dict(od: dict, context: str = "object") -> ObjectInstance:
    _require_keys(od, _OBJECT_KEYS, context)
    try:
        box = OrientedBox(np.asarray(od["center"], dtype=float), float(od["yaw"]),
                          np.asarray(od["extents"], dtype=float))
        return ObjectInstance(id=str(od["id"]), category=od["category"],
                              box=box, seat_height=float(od["seat_height"]))
    except (ValueError, TypeError) as exc:
        raise SceneFormatError(f"{context}: {exc}") from exc


def scene_to_dict(scene: Scene) -> dict:
    return {
        "bounds": [float(b) for b in scene.bounds],
        "objects": [object_to_dict(o) for o in scene.objects],
        "obstacles": [
            {"center": b.center.tolist(), "yaw": b.yaw, "extents": b.half_extents.tolist()}
            for b in scene.obstacles
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    if not isinstance(data, dict):
        raise SceneFormatError("scene file must contain a JSON object")
    _require_keys(data, _SCENE_KEYS, "scene")
    bounds = data["bounds"]
    if not (isinstance(bounds, list) and len(bounds) == 4):
        raise SceneFormatError("bounds must be [xmin, ymin, xmax, ymax]")
    objects = [object_from_dict(od, f"objects[{k}]")
               for k, od in enumerate(data["objects"])]
    obstacles = []
    for k, bd in enumerate(data["obstacles"]):
        _require_keys(bd, _OBSTACLE_KEYS, f"obstacles[{k}]")
        try:
            obstacles.append(OrientedBox(np.asarray(bd["center"], dtype=float),
                                         float(bd["yaw"]),
                                         np.asarray(bd["extents"], dtype=float)))
        except (ValueError, TypeError) as exc:
            raise SceneFormatError(f"obstacles[{k}]: {exc}") from exc
    try:
        return Scene(objects=objects, obstacles=obstacles, bounds=tuple(float(b) for b in bounds))
    except ValueError as exc:
        raise SceneFormatError(str(exc)) from exc


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, indent=2)


def load_scene(path) -> Scene:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"invalid JSON in {path}: {exc}") from exc
    return scene_from_dict(data)

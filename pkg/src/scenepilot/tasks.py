"""Goal-conditioned location tasks: sit, get-up, lie-down, lie-get-up, follow.

Every task asks the character to bring its root to a target location.  Rewards
are squared-exponential pulls toward the target plus, when far away, a term
that rewards moving toward it at a target speed.  Goals are encoded in the
character's local frame each control step, so policies transfer under global
translation and rotation.

Episodes end on a fall, on straying too far from a followed trajectory, after
enough accumulated time inside the success radius (the "settle" rule), or at
the episode time limit.  Settle and timeout are truncations: the episode is
cut short while the task could continue, so the trainer bootstraps the value
of the final state.  Fall and deviation are true failures with no bootstrap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .character import (OBS_DIM, BatchState, StepConfig, SurrogateState,
                        derive_heights, detect_fall_batch, observe_batch, step_batch)
from .geom import box_vertices, footprint_contains, normalize_angle, rotate2d, \
    rotation6d_encode
from .planner import TRAJ_DT, Trajectory, generate_training_trajectory
from .scene import ObjectInstance, object_from_dict, object_to_dict

TASK_KINDS = ("sit", "getup", "liedown", "lie_getup", "traj")

# termination codes, in increasing precedence
TERM_NONE = 0
TERM_TIMEOUT = 1
TERM_SETTLE = 2
TERM_DEVIATION = 3
TERM_FALL = 4
TERMINATION_NAMES = ("none", "timeout", "settle", "deviation", "fall")

GETUP_STAND_HEIGHT = 0.9
LIE_GETUP_ROOT_HEIGHT = 0.89
LIE_GETUP_FOOT_HEIGHT = 0.0
LIE_GETUP_HEAD_HEIGHT = 1.65
GETUP_FORWARD_OFFSET = 0.3


@dataclass
class TaskConfig:
    """Reward constants, episode limits, and termination thresholds."""

    kind: str = "sit"
    g_vel: float = 1.5  # m/s target approach speed
    near_weight: float = 0.7
    far_weight: float = 0.3
    switch_dist: float = 0.5  # m, far branch beyond this object distance
    episode_s: float = 10.0
    settle_steps: int = 30  # accumulated in-radius steps that end the episode; 0 disables
    success_radius: float = 0.20  # m
    deviation_limit: float = 2.0  # m, follow task only
    distance_range: tuple = (1.0, 5.0)  # m, object placement at reset
    rsi_speed_range: tuple = (0.0, 1.5)  # m/s initial walk speed
    traj_settle_s: float = 0.5  # grace period after the trajectory ends

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if abs(self.near_weight + self.far_weight - 1.0) > 1e-9:
            raise ValueError("near and far weights must sum to 1")
        if self.settle_steps < 0:
            raise ValueError("settle_steps must be >= 0")

    @property
    def goal_dim(self) -> int:
        return 20 if self.kind == "traj" else 38

    @property
    def obs_dim(self) -> int:
        return OBS_DIM + self.goal_dim


def _ret(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def reward_near(g_tar, x_root):
    """exp(-10 |g_tar - x_root|^2), 3D."""
    g = np.asarray(g_tar, dtype=float)
    x = np.asarray(x_root, dtype=float)
    d2 = np.sum((g - x) ** 2, axis=-1)
    return _ret(np.exp(-10.0 * d2))


def reward_far(d_star, root_vel, g_vel: float = 1.5):
    """exp(-2 (g_vel - d_star . v)^2) with d_star the horizontal unit vector
    toward the object; a zero d_star (character at the object) scores the
    stationary value exp(-2 g_vel^2)."""
    d = np.asarray(d_star, dtype=float)
    v = np.asarray(root_vel, dtype=float)
    proj = np.sum(d * v, axis=-1)
    return _ret(np.exp(-2.0 * (g_vel - proj) ** 2))


def direction_to(x_star_xy, x_root_xy):
    """Horizontal unit vector root -> object; zero when they coincide."""
    d = np.asarray(x_star_xy, dtype=float) - np.asarray(x_root_xy, dtype=float)
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    return np.where(n > 1e-9, d / np.maximum(n, 1e-9), 0.0)


def _near_far_blend(near, far_dist, d_star, root_vel, cfg: TaskConfig):
    far = reward_far(d_star, root_vel, cfg.g_vel)
    blended = cfg.near_weight * near + cfg.far_weight * far
    saturated = cfg.near_weight * near + cfg.far_weight
    return np.where(far_dist > cfg.switch_dist, blended, saturated)


def reward_sit(g_tar, x_star, x_root, root_vel, cfg: TaskConfig):
    """Near/far blend: beyond the switch distance the far term rewards
    approaching the object at g_vel; inside it the far term saturates."""
    g = np.asarray(g_tar, dtype=float)
    xs = np.asarray(x_star, dtype=float)
    xr = np.asarray(x_root, dtype=float)
    near = reward_near(g, xr)
    far_dist = np.linalg.norm(xs[..., :2] - xr[..., :2], axis=-1)
    d_star = direction_to(xs[..., :2], xr[..., :2])
    return _ret(_near_far_blend(near, far_dist, d_star, root_vel, cfg))


def reward_getup(g_tar, x_root):
    """Near term only; the target is recomputed online while rising."""
    return reward_near(g_tar, x_root)


def reward_liedown_near(g_tar, x_root, g_tar_head_h, x_head):
    """exp(-10 (|g_tar - x_root|^2 + (head target - head)^2))."""
    g = np.asarray(g_tar, dtype=float)
    x = np.asarray(x_root, dtype=float)
    d2 = np.sum((g - x) ** 2, axis=-1)
    h2 = (np.asarray(g_tar_head_h, dtype=float) - np.asarray(x_head, dtype=float)) ** 2
    return _ret(np.exp(-10.0 * (d2 + h2)))


def reward_liedown(g_tar, x_star, x_root, root_vel, x_head, cfg: TaskConfig):
    """Lie-down total: the sit blend with the joint root+head near term.

    The head height target equals the height component of g_tar.
    """
    g = np.asarray(g_tar, dtype=float)
    xs = np.asarray(x_star, dtype=float)
    xr = np.asarray(x_root, dtype=float)
    near = reward_liedown_near(g, xr, g[..., 2], x_head)
    far_dist = np.linalg.norm(xs[..., :2] - xr[..., :2], axis=-1)
    d_star = direction_to(xs[..., :2], xr[..., :2])
    return _ret(_near_far_blend(near, far_dist, d_star, root_vel, cfg))


def reward_lie_getup(g_tar, x_root, x_foot, x_head,
                     g_tar_foot_h: float = LIE_GETUP_FOOT_HEIGHT,
                     g_tar_head_h: float = LIE_GETUP_HEAD_HEIGHT):
    """0.5 exp(-10 root err^2) + 0.3 exp(-10 foot err^2) + 0.2 exp(-10 head err^2)."""
    g = np.asarray(g_tar, dtype=float)
    x = np.asarray(x_root, dtype=float)
    root2 = np.sum((g - x) ** 2, axis=-1)
    foot2 = (np.asarray(g_tar_foot_h, dtype=float) - np.asarray(x_foot, dtype=float)) ** 2
    head2 = (np.asarray(g_tar_head_h, dtype=float) - np.asarray(x_head, dtype=float)) ** 2
    return _ret(0.5 * np.exp(-10.0 * root2) + 0.3 * np.exp(-10.0 * foot2)
                + 0.2 * np.exp(-10.0 * head2))


def reward_traj(x_root, p_t):
    """exp(-2 |x_root_xy - p_t|^2), horizontal only."""
    x = np.asarray(x_root, dtype=float)
    p = np.asarray(p_t, dtype=float)
    d2 = np.sum((x[..., :2] - p) ** 2, axis=-1)
    return _ret(np.exp(-2.0 * d2))


def getup_target(root_pos, heading, posture, forward: float = GETUP_FORWARD_OFFSET,
                 height: float = GETUP_STAND_HEIGHT):
    """Standing target ahead of a seated character, recomputed every step.

    The forward offset scales with posture: fully seated it sits the full
    offset ahead (where the feet are planted); as the character rises the
    target converges onto the root so the success radius is reachable.
    """
    pos = np.asarray(root_pos, dtype=float)
    h = np.asarray(heading, dtype=float)
    p = np.asarray(posture, dtype=float)
    off = forward * p
    tx = pos[..., 0] + off * np.cos(h)
    ty = pos[..., 1] + off * np.sin(h)
    tz = np.broadcast_to(np.asarray(height, dtype=float), tx.shape)
    return np.stack([tx, ty, tz], axis=-1)


def lie_getup_target(root_pos, heading, posture):
    return getup_target(root_pos, heading, posture, height=LIE_GETUP_ROOT_HEIGHT)


def update_settle(accum, dist, cfg: TaskConfig):
    """Advance the settle accumulator; returns (accum', triggered).

    Accumulated (not consecutive) in-radius steps; never decremented within
    an episode.  A threshold of zero disables the rule.
    """
    accum = np.asarray(accum)
    inc = np.asarray(dist) <= cfg.success_radius
    accum = accum + inc.astype(accum.dtype if accum.dtype.kind == "i" else int)
    trig = (cfg.settle_steps > 0) & (accum >= cfg.settle_steps)
    if accum.ndim == 0:
        return int(accum), bool(trig)
    return accum, trig


# ---------------------------------------------------------------------------
# goal encoding

# g_obj layout (35 scalars), all in the character's local frame:
#   [0:3]    object center (local xy, world z)
#   [3:9]    object yaw relative to character heading, as 6D rotation
#   [9:11]   object facing direction
#   [11:35]  8 bounding-box vertices (local xy, world z each)
OBJ_GOAL_DIM = 35
TARGET_GOAL_DIM = 3
WINDOW_POINTS = 10


def object_goal_features(root_pos, heading, obj_center, obj_yaw, obj_facing,
                         obj_vertices) -> np.ndarray:
    """(N, 35) object features in each character's local frame."""
    root_pos = np.asarray(root_pos, dtype=float)
    heading = np.asarray(heading, dtype=float)
    center = np.asarray(obj_center, dtype=float)
    verts = np.asarray(obj_vertices, dtype=float)
    local_c = rotate2d(center[:, :2] - root_pos, -heading)
    rel_rot = rotation6d_encode(np.asarray(obj_yaw, dtype=float) - heading)
    local_f = rotate2d(np.asarray(obj_facing, dtype=float), -heading)
    local_v_xy = rotate2d(verts[:, :, :2] - root_pos[:, None, :], -heading[:, None])
    local_v = np.concatenate([local_v_xy, verts[:, :, 2:3]], axis=2)
    return np.concatenate(
        [local_c, center[:, 2:3], rel_rot, local_f, local_v.reshape(len(verts), -1)],
        axis=1)


def target_goal_features(root_pos, heading, g_tar) -> np.ndarray:
    """(N, 3) target location: local xy, world height."""
    g = np.asarray(g_tar, dtype=float)
    local = rotate2d(g[:, :2] - np.asarray(root_pos, dtype=float),
                     -np.asarray(heading, dtype=float))
    return np.concatenate([local, g[:, 2:3]], axis=1)


def window_goal_features(root_pos, heading, window) -> np.ndarray:
    """(N, 20) future path points in the local frame, flattened."""
    w = np.asarray(window, dtype=float)
    heading = np.asarray(heading, dtype=float)
    local = rotate2d(w - np.asarray(root_pos, dtype=float)[:, None, :], -heading[:, None])
    return local.reshape(len(w), -1)


def _object_arrays(obj: ObjectInstance):
    return (obj.box.center, obj.box.yaw, obj.facing, box_vertices(obj.box))


def build_goal(state: SurrogateState, cfg: TaskConfig, obj: ObjectInstance = None,
               trajectory: Trajectory = None, t: float = 0.0) -> np.ndarray:
    """Single-character goal vector: 38 scalars for object tasks, 20 for follow."""
    pos = state.root_pos[None, :]
    h = np.array([state.heading])
    if cfg.kind == "traj":
        if trajectory is None:
            raise ValueError("follow task needs a trajectory")
        win = trajectory.query_window(t)[None, :, :]
        return window_goal_features(pos, h, win)[0]
    if obj is None:
        raise ValueError(f"{cfg.kind} task needs an object")
    center, yaw, facing, verts = _object_arrays(obj)
    g_obj = object_goal_features(pos, h, center[None], np.array([yaw]),
                                 facing[None], verts[None])
    if cfg.kind == "sit" or cfg.kind == "liedown":
        g_tar = obj.sit_target[None]
    elif cfg.kind == "getup":
        g_tar = getup_target(pos, h, np.array([state.posture]))
    else:
        g_tar = lie_getup_target(pos, h, np.array([state.posture]))
    return np.concatenate([g_obj, target_goal_features(pos, h, g_tar)], axis=1)[0]


def terminate(state: SurrogateState, cfg: TaskConfig, episode_step: int,
              settle_accum: int = 0, trajectory: Trajectory = None,
              control_dt: float = 1.0 / 30.0, episode_steps: int = None) -> str:
    """Single-character termination kind for the current step."""
    if episode_steps is None:
        episode_steps = int(round(cfg.episode_s / control_dt))
    if detect_fall_batch(BatchState.from_states([state]))[0]:
        return "fall"
    if cfg.kind == "traj" and trajectory is not None:
        p = trajectory.query(episode_step * control_dt)
        if np.linalg.norm(state.root_pos - p) > cfg.deviation_limit:
            return "deviation"
    if cfg.kind != "traj" and cfg.settle_steps > 0 and settle_accum >= cfg.settle_steps:
        return "settle"
    if episode_step >= episode_steps:
        return "timeout"
    return "none"


# ---------------------------------------------------------------------------
# pose database

POSE_ROW_DIM = 8
# row layout, object-local frame:
#   [0:2] root xy  [2] root height  [3] heading relative to object yaw
#   [4:6] root velocity  [6] yaw rate  [7] posture


class PoseDatabaseError(ValueError):
    """Missing, empty, or malformed pose database."""


@dataclass
class PoseDB:
    """Sampled rest poses per object, stored in each object's local frame."""

    mode: str  # "sit" or "lie"
    objects: dict = field(default_factory=dict)  # id -> ObjectInstance
    states: dict = field(default_factory=dict)  # id -> (K, 8) rows

    def __post_init__(self):
        if self.mode not in ("sit", "lie"):
            raise PoseDatabaseError(f"mode must be 'sit' or 'lie', got {self.mode!r}")
        if set(self.objects) != set(self.states):
            raise PoseDatabaseError("objects and states must cover the same ids")
        for oid, rows in self.states.items():
            rows = np.asarray(rows, dtype=float)
            if rows.ndim != 2 or rows.shape[1] != POSE_ROW_DIM:
                raise PoseDatabaseError(f"{oid}: rows must be (K, {POSE_ROW_DIM})")
            self.states[oid] = rows

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.states.values())

    def save(self, path) -> None:
        meta = {"mode": self.mode,
                "objects": {k: object_to_dict(o) for k, o in self.objects.items()}}
        arrays = {f"states/{k}": v for k, v in self.states.items()}
        np.savez(path, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "PoseDB":
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["meta"]))
                states = {k[len("states/"):]: data[k] for k in data.files
                          if k.startswith("states/")}
        except (OSError, KeyError, ValueError) as exc:
            raise PoseDatabaseError(f"cannot read pose database {path}: {exc}") from exc
        objects = {k: object_from_dict(v, f"pose db object {k}")
                   for k, v in meta.get("objects", {}).items()}
        return cls(mode=meta.get("mode", "sit"), objects=objects, states=states)


def pose_rows_from_states(batch: BatchState, obj: ObjectInstance) -> np.ndarray:
    """World states -> (N, 8) object-local rows."""
    c, yaw = obj.box.center[:2], obj.box.yaw
    local_p = rotate2d(batch.root_pos - c, -yaw)
    local_v = rotate2d(batch.root_vel, -yaw)
    rel_h = normalize_angle(batch.heading - yaw)
    return np.stack([local_p[:, 0], local_p[:, 1], batch.root_height, rel_h,
                     local_v[:, 0], local_v[:, 1], batch.yaw_rate, batch.posture],
                    axis=1)


def pose_rows_to_states(rows: np.ndarray, obj: ObjectInstance,
                        cfg: StepConfig) -> BatchState:
    """(N, 8) object-local rows -> world states under the placed object."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[None, :]
    c, yaw = obj.box.center[:2], obj.box.yaw
    pos = rotate2d(rows[:, 0:2], yaw) + c
    vel = rotate2d(rows[:, 4:6], yaw)
    heading = normalize_angle(rows[:, 3] + yaw)
    head, foot = derive_heights(rows[:, 7], rows[:, 2], cfg)
    return BatchState(root_pos=pos, root_height=rows[:, 2].copy(), heading=heading,
                      root_vel=vel, yaw_rate=rows[:, 6].copy(), posture=rows[:, 7].copy(),
                      head_height=head, foot_height=foot)


# ---------------------------------------------------------------------------
# vectorized environment

_TRAJ_BANK_WIDTH = 140


class _TrajBank:
    """Per-env trajectories padded to fixed width for vectorized queries."""

    def __init__(self, n: int):
        self.pts = np.zeros((n, _TRAJ_BANK_WIDTH, 2))
        self.n_pts = np.full(n, 2, dtype=int)
        self.trajs = [None] * n

    def put(self, i: int, traj: Trajectory) -> None:
        m = len(traj.points)
        if m > _TRAJ_BANK_WIDTH:
            raise ValueError(f"trajectory with {m} points exceeds the bank width")
        self.pts[i, :m] = traj.points
        self.pts[i, m:] = traj.points[-1]  # padding doubles as end clamping
        self.n_pts[i] = m
        self.trajs[i] = traj

    @property
    def end(self) -> np.ndarray:
        return self.pts[np.arange(len(self.n_pts)), self.n_pts - 1]

    @property
    def duration(self) -> np.ndarray:
        return (self.n_pts - 1) * TRAJ_DT

    def query(self, t: np.ndarray) -> np.ndarray:
        u = np.clip(np.asarray(t, dtype=float) / TRAJ_DT, 0.0, self.n_pts - 1.0)
        i0 = np.minimum(u.astype(int), self.n_pts - 2)
        frac = (u - i0)[:, None]
        rows = np.arange(len(u))
        return (1.0 - frac) * self.pts[rows, i0] + frac * self.pts[rows, i0 + 1]

    def window(self, t: np.ndarray, count: int = WINDOW_POINTS) -> np.ndarray:
        t = np.asarray(t, dtype=float)[:, None] + np.arange(count) * TRAJ_DT
        u = np.clip(t / TRAJ_DT, 0.0, (self.n_pts - 1.0)[:, None])
        i0 = np.minimum(u.astype(int), (self.n_pts - 2)[:, None])
        frac = (u - i0)[:, :, None]
        rows = np.arange(len(t))[:, None]
        return (1.0 - frac) * self.pts[rows, i0] + frac * self.pts[rows, i0 + 1]


@dataclass
class StepResult:
    """One vectorized control step.

    `obs` is the observation to act on next (reset rows already replaced);
    `terminal_obs` holds the pre-reset observation for bootstrapping, valid
    where `done`.  `truncated` marks settle/timeout endings whose final state
    value should be bootstrapped.
    """

    obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    truncated: np.ndarray
    terminal_obs: np.ndarray
    term_code: np.ndarray
    success: np.ndarray
    ep_len: np.ndarray
    first_in_step: np.ndarray
    dist: np.ndarray  # 3D distance to target, or horizontal distance to path end
    object_ids: list = None  # pre-reset object ids, populated when any env ended


class VecTaskEnv:
    """N independent single-character episodes of one task kind.

    Objects, pose databases, and trajectories are sampled per environment at
    reset; environments that terminate are reset in place and their fresh
    observation appears in the returned `obs`.
    """

    def __init__(self, cfg: TaskConfig, n_envs: int, rng: np.random.Generator,
                 objects=None, pose_db: PoseDB = None, rsi_sampler=None,
                 step_cfg: StepConfig = None, bounds=(-8.0, -8.0, 8.0, 8.0),
                 blockers=()):
        if n_envs < 1:
            raise ValueError("need at least one environment")
        self.cfg = cfg
        base = step_cfg if step_cfg is not None else StepConfig()
        mode = "lie" if cfg.kind in ("liedown", "lie_getup") else "sit"
        self.step_cfg = replace(base, posture_mode=mode)
        self.n = n_envs
        self.rng = rng
        self.bounds = bounds
        self.blockers = tuple(blockers)
        self.rsi_sampler = rsi_sampler
        self.pose_db = pose_db
        self.objects = list(objects) if objects is not None else []

        if cfg.kind in ("sit", "liedown") and not self.objects:
            raise ValueError(f"{cfg.kind} task needs object templates")
        if cfg.kind in ("getup", "lie_getup"):
            if pose_db is None or pose_db.total == 0:
                raise PoseDatabaseError(f"{cfg.kind} task needs a non-empty pose database")
            want = "lie" if cfg.kind == "lie_getup" else "sit"
            if pose_db.mode != want:
                raise PoseDatabaseError(
                    f"{cfg.kind} task needs a {want!r} pose database, got {pose_db.mode!r}")
            self._db_ids = sorted(pose_db.states)

        self.goal_dim = cfg.goal_dim
        self.obs_dim = cfg.obs_dim
        self.state = BatchState.standing(n_envs, self.step_cfg)
        self.episode_step = np.zeros(n_envs, dtype=int)
        self.budget = np.full(n_envs, self._default_budget(), dtype=int)
        self.settle_accum = np.zeros(n_envs, dtype=int)
        self.first_in_step = np.full(n_envs, -1, dtype=int)

        self.obj_center = np.zeros((n_envs, 3))
        self.obj_yaw = np.zeros(n_envs)
        self.obj_facing = np.tile(np.array([1.0, 0.0]), (n_envs, 1))
        self.obj_vertices = np.zeros((n_envs, 8, 3))
        self.obj_target = np.zeros((n_envs, 3))
        self.env_objects = [None] * n_envs
        self.bank = _TrajBank(n_envs) if cfg.kind == "traj" else None

        self.reset_all()

    # -- reset ------------------------------------------------------------

    def _default_budget(self) -> int:
        return int(round(self.cfg.episode_s / self.step_cfg.control_dt))

    def _set_object(self, i: int, obj: ObjectInstance) -> None:
        self.env_objects[i] = obj
        self.obj_center[i] = obj.box.center
        self.obj_yaw[i] = obj.box.yaw
        self.obj_facing[i] = obj.facing
        self.obj_vertices[i] = box_vertices(obj.box)
        self.obj_target[i] = obj.sit_target

    def _initial_walk_state(self) -> SurrogateState:
        if self.rsi_sampler is not None:
            return self.rsi_sampler(self.rng)
        lo, hi = self.cfg.rsi_speed_range
        heading = self.rng.uniform(-math.pi, math.pi)
        return SurrogateState.standing(self.step_cfg, heading=heading,
                                       speed=self.rng.uniform(lo, hi))

    def _place_object_near(self, i: int, char_xy) -> None:
        template = self.objects[self.rng.integers(len(self.objects))]
        lo, hi = self.cfg.distance_range
        for _ in range(50):
            dist = self.rng.uniform(lo, hi)
            ang = self.rng.uniform(-math.pi, math.pi)
            yaw = self.rng.uniform(-math.pi, math.pi)
            center = np.asarray(char_xy) + dist * np.array([math.cos(ang), math.sin(ang)])
            obj = template.moved(center, yaw)
            if not footprint_contains(obj.box, char_xy, margin=0.1):
                self._set_object(i, obj)
                return
        raise RuntimeError("could not place object clear of the character")

    def _reset_envs(self, idx) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        kind = self.cfg.kind
        for i in idx:
            if kind in ("sit", "liedown"):
                s = self._initial_walk_state()
                self.state.put(i, s)
                self._place_object_near(i, s.root_pos)
            elif kind in ("getup", "lie_getup"):
                oid = self._db_ids[self.rng.integers(len(self._db_ids))]
                rows = self.pose_db.states[oid]
                row = rows[self.rng.integers(len(rows))]
                obj = self.pose_db.objects[oid].moved(
                    (0.0, 0.0), self.rng.uniform(-math.pi, math.pi))
                self._set_object(i, obj)
                self.state.put(i, pose_rows_to_states(row, obj, self.step_cfg).select(0))
            else:
                traj = generate_training_trajectory(self.rng, self.bounds)
                self.bank.put(i, traj)
                d0 = traj.points[1] - traj.points[0]
                heading = math.atan2(d0[1], d0[0])
                speed = float(np.linalg.norm(d0)) / TRAJ_DT
                self.state.put(i, SurrogateState.standing(
                    self.step_cfg, pos=traj.points[0], heading=heading, speed=speed))
                self.budget[i] = int(round(
                    (traj.duration + self.cfg.traj_settle_s) / self.step_cfg.control_dt))
        self.episode_step[idx] = 0
        self.settle_accum[idx] = 0
        self.first_in_step[idx] = -1

    def reset_all(self) -> np.ndarray:
        self._reset_envs(np.arange(self.n))
        return self.observe()

    # -- observation ------------------------------------------------------

    def _g_tar(self, state: BatchState) -> np.ndarray:
        kind = self.cfg.kind
        if kind in ("sit", "liedown"):
            return self.obj_target
        if kind == "getup":
            return getup_target(state.root_pos, state.heading, state.posture)
        if kind == "lie_getup":
            return lie_getup_target(state.root_pos, state.heading, state.posture)
        raise ValueError("follow task has no point target")

    def _goal(self, state: BatchState) -> np.ndarray:
        if self.cfg.kind == "traj":
            t = self.episode_step * self.step_cfg.control_dt
            win = self.bank.window(t)
            return window_goal_features(state.root_pos, state.heading, win)
        g_obj = object_goal_features(state.root_pos, state.heading, self.obj_center,
                                     self.obj_yaw, self.obj_facing, self.obj_vertices)
        g_tar = target_goal_features(state.root_pos, state.heading, self._g_tar(state))
        return np.concatenate([g_obj, g_tar], axis=1)

    def observe(self) -> np.ndarray:
        return np.concatenate([observe_batch(self.state), self._goal(self.state)], axis=1)

    # -- stepping ---------------------------------------------------------

    def _reward(self, state: BatchState, t: np.ndarray) -> np.ndarray:
        kind = self.cfg.kind
        x_root = state.x_root
        if kind == "sit":
            return reward_sit(self.obj_target, self.obj_center, x_root,
                              state.root_vel, self.cfg)
        if kind == "getup":
            return reward_getup(self._g_tar(state), x_root)
        if kind == "liedown":
            return reward_liedown(self.obj_target, self.obj_center, x_root,
                                  state.root_vel, state.head_height, self.cfg)
        if kind == "lie_getup":
            return reward_lie_getup(self._g_tar(state), x_root, state.foot_height,
                                    state.head_height)
        return reward_traj(x_root, self.bank.query(t))

    def step(self, actions: np.ndarray) -> StepResult:
        ns = step_batch(self.state, actions, self.step_cfg, self.blockers)
        self.episode_step += 1
        t = self.episode_step * self.step_cfg.control_dt
        reward = np.asarray(self._reward(ns, t))

        fall = detect_fall_batch(ns)
        code = np.zeros(self.n, dtype=int)
        code[self.episode_step >= self.budget] = TERM_TIMEOUT
        if self.cfg.kind == "traj":
            p = self.bank.query(t)
            off_path = np.linalg.norm(ns.root_pos - p, axis=1)
            code[off_path > self.cfg.deviation_limit] = TERM_DEVIATION
            dist = np.linalg.norm(ns.root_pos - self.bank.end, axis=1)
            in_radius = dist <= self.cfg.success_radius
        else:
            dist = np.linalg.norm(ns.x_root - self._g_tar(ns), axis=1)
            in_radius = dist <= self.cfg.success_radius
            self.settle_accum += in_radius
            if self.cfg.settle_steps > 0:
                code[self.settle_accum >= self.cfg.settle_steps] = TERM_SETTLE
        code[fall] = TERM_FALL
        newly_in = (self.first_in_step < 0) & in_radius
        self.first_in_step[newly_in] = self.episode_step[newly_in]

        done = code != TERM_NONE
        truncated = (code == TERM_SETTLE) | (code == TERM_TIMEOUT)
        if self.cfg.kind == "traj":
            success = (code == TERM_TIMEOUT) & in_radius
        else:
            success = (code == TERM_SETTLE) | ((code == TERM_TIMEOUT) & in_radius)

        self.state = ns
        terminal_obs = self.observe()
        ep_len = self.episode_step.copy()
        first_in = self.first_in_step.copy()
        object_ids = None
        if done.any():
            object_ids = [o.id if o is not None else "" for o in self.env_objects]
            self._reset_envs(np.flatnonzero(done))
        obs = self.observe()
        return StepResult(obs=obs, reward=reward, done=done, truncated=truncated,
                          terminal_obs=terminal_obs, term_code=code, success=success,
                          ep_len=ep_len, first_in_step=first_in, dist=dist,
                          object_ids=object_ids)

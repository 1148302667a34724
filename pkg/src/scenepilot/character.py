"""Surrogate character: a controllable planar root body with a posture scalar.

Replaces a jointed humanoid with the minimal state every task reward needs:
root position/height, heading, velocities, and a posture scalar in [0, 1]
(0 = standing, 1 = fully seated or lying).  Head and foot heights are derived
from posture and root height:

  sit mode:  head = root_height + TORSO_RISE,            foot = 0
  lie mode:  head = root_height + TORSO_RISE*(1-posture), foot = posture*(root_height-0.05)

so a standing character (posture 0) has identical heights in both modes, and
a fully lying character's head drops to root level while its feet rest on the
support surface.

Simulation runs at 60 Hz with two substeps per 30 Hz control step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geom import normalize_angle, rotate2d, rotation6d_encode

# Vertical distance from root to head for an upright torso (meters).
TORSO_RISE = 0.75


class SimulationFaultError(RuntimeError):
    """Raised when non-finite state or action values enter the integrator."""


@dataclass
class StepConfig:
    """Integrator constants and per-channel action gains."""

    sim_dt: float = 1.0 / 60.0
    control_substeps: int = 2  # control rate = 60/2 = 30 Hz
    max_speed: float = 2.0  # m/s
    accel_gain: float = 4.0  # m/s^2 per unit action
    turn_gain: float = 3.0  # rad/s per unit action
    posture_gain: float = 2.0  # 1/s per unit action
    height_gain: float = 1.5  # m/s per unit action
    drag: float = 1.5  # 1/s velocity decay
    char_radius: float = 0.3  # m, horizontal collision radius
    stand_root_height: float = 0.9
    stand_head_height: float = 1.65
    min_root_height: float = 0.05
    max_root_height: float = 1.2
    posture_mode: str = "sit"  # "sit" or "lie"

    @property
    def control_dt(self) -> float:
        return self.sim_dt * self.control_substeps

    def __post_init__(self):
        if self.posture_mode not in ("sit", "lie"):
            raise ValueError(f"posture_mode must be 'sit' or 'lie', got {self.posture_mode!r}")


@dataclass
class Action:
    """Five control channels, each clamped to [-1, 1] before gain scaling."""

    forward_accel: float = 0.0
    lateral_accel: float = 0.0
    turn_rate: float = 0.0
    posture_rate: float = 0.0
    height_rate: float = 0.0

    DIM = 5

    def as_array(self) -> np.ndarray:
        return np.array([self.forward_accel, self.lateral_accel, self.turn_rate,
                         self.posture_rate, self.height_rate])

    @classmethod
    def from_array(cls, a) -> "Action":
        a = np.asarray(a, dtype=float).reshape(5)
        return cls(*a.tolist())


@dataclass
class SurrogateState:
    """Root-centric character state (world frame; heights absolute)."""

    root_pos: np.ndarray  # (2,) x, y
    root_height: float
    heading: float
    root_vel: np.ndarray  # (2,) world-frame linear velocity
    yaw_rate: float
    posture: float
    head_height: float
    foot_height: float

    def __post_init__(self):
        self.root_pos = np.asarray(self.root_pos, dtype=float).reshape(2)
        self.root_vel = np.asarray(self.root_vel, dtype=float).reshape(2)

    @property
    def x_root(self) -> np.ndarray:
        """3D root position (x, y, root_height)."""
        return np.array([self.root_pos[0], self.root_pos[1], self.root_height])

    @classmethod
    def standing(cls, cfg: StepConfig, pos=(0.0, 0.0), heading: float = 0.0,
                 speed: float = 0.0) -> "SurrogateState":
        vel = speed * np.array([math.cos(heading), math.sin(heading)])
        head, foot = derive_heights(0.0, cfg.stand_root_height, cfg)
        return cls(root_pos=np.asarray(pos, dtype=float), root_height=cfg.stand_root_height,
                   heading=normalize_angle(heading), root_vel=vel, yaw_rate=0.0,
                   posture=0.0, head_height=float(head), foot_height=float(foot))


def derive_heights(posture, root_height, cfg: StepConfig):
    """Head and foot heights from posture and root height (see module doc)."""
    posture = np.asarray(posture, dtype=float)
    root_height = np.asarray(root_height, dtype=float)
    if cfg.posture_mode == "sit":
        head = root_height + TORSO_RISE
        foot = np.zeros_like(root_height)
    else:
        head = root_height + TORSO_RISE * (1.0 - posture)
        foot = posture * np.maximum(root_height - 0.05, 0.0)
    return head, foot


@dataclass
class BatchState:
    """Struct-of-arrays form of SurrogateState for vectorized environments."""

    root_pos: np.ndarray  # (N, 2)
    root_height: np.ndarray  # (N,)
    heading: np.ndarray  # (N,)
    root_vel: np.ndarray  # (N, 2)
    yaw_rate: np.ndarray  # (N,)
    posture: np.ndarray  # (N,)
    head_height: np.ndarray  # (N,)
    foot_height: np.ndarray  # (N,)

    @classmethod
    def standing(cls, n: int, cfg: StepConfig) -> "BatchState":
        head, foot = derive_heights(0.0, cfg.stand_root_height, cfg)
        return cls(
            root_pos=np.zeros((n, 2)),
            root_height=np.full(n, cfg.stand_root_height),
            heading=np.zeros(n),
            root_vel=np.zeros((n, 2)),
            yaw_rate=np.zeros(n),
            posture=np.zeros(n),
            head_height=np.full(n, float(head)),
            foot_height=np.full(n, float(foot)),
        )

    @classmethod
    def from_states(cls, states) -> "BatchState":
        return cls(
            root_pos=np.stack([s.root_pos for s in states]),
            root_height=np.array([s.root_height for s in states]),
            heading=np.array([s.heading for s in states]),
            root_vel=np.stack([s.root_vel for s in states]),
            yaw_rate=np.array([s.yaw_rate for s in states]),
            posture=np.array([s.posture for s in states]),
            head_height=np.array([s.head_height for s in states]),
            foot_height=np.array([s.foot_height for s in states]),
        )

    def select(self, i: int) -> SurrogateState:
        return SurrogateState(
            root_pos=self.root_pos[i].copy(), root_height=float(self.root_height[i]),
            heading=float(self.heading[i]), root_vel=self.root_vel[i].copy(),
            yaw_rate=float(self.yaw_rate[i]), posture=float(self.posture[i]),
            head_height=float(self.head_height[i]), foot_height=float(self.foot_height[i]))

    def put(self, i: int, s: SurrogateState) -> None:
        self.root_pos[i] = s.root_pos
        self.root_height[i] = s.root_height
        self.heading[i] = s.heading
        self.root_vel[i] = s.root_vel
        self.yaw_rate[i] = s.yaw_rate
        self.posture[i] = s.posture
        self.head_height[i] = s.head_height
        self.foot_height[i] = s.foot_height

    @property
    def n(self) -> int:
        return self.root_pos.shape[0]

    def copy(self) -> "BatchState":
        return BatchState(
            root_pos=self.root_pos.copy(), root_height=self.root_height.copy(),
            heading=self.heading.copy(), root_vel=self.root_vel.copy(),
            yaw_rate=self.yaw_rate.copy(), posture=self.posture.copy(),
            head_height=self.head_height.copy(), foot_height=self.foot_height.copy())

    @property
    def x_root(self) -> np.ndarray:
        """(N, 3) root positions."""
        return np.concatenate([self.root_pos, self.root_height[:, None]], axis=1)

    def finite_mask(self) -> np.ndarray:
        ok = np.isfinite(self.root_pos).all(axis=1)
        for arr in (self.root_height, self.heading, self.yaw_rate, self.posture,
                    self.head_height, self.foot_height):
            ok &= np.isfinite(arr)
        ok &= np.isfinite(self.root_vel).all(axis=1)
        return ok


def _resolve_collisions(pos, vel, blockers, radius: float, passes: int = 3):
    """Push positions out of inflated box footprints, zeroing inward velocity.

    Inflation uses the box footprint grown by `radius` on each axis; pushout
    is along the axis of least penetration in the box frame, which yields a
    slide-along response for motion oblique to a wall.
    """
    for _ in range(passes):
        any_push = False
        for box in blockers:
            c, yaw = box.center[:2], box.yaw
            hx = box.half_extents[0] + radius
            hy = box.half_extents[1] + radius
            local = rotate2d(pos - c, -yaw)
            pen_x = hx - np.abs(local[:, 0])
            pen_y = hy - np.abs(local[:, 1])
            inside = (pen_x > 0.0) & (pen_y > 0.0)
            if not inside.any():
                continue
            any_push = True
            lv = rotate2d(vel, -yaw)
            sx = np.where(local[:, 0] >= 0.0, 1.0, -1.0)
            sy = np.where(local[:, 1] >= 0.0, 1.0, -1.0)
            push_x = inside & (pen_x <= pen_y)
            push_y = inside & ~push_x
            local[push_x, 0] = (sx * hx)[push_x]
            local[push_y, 1] = (sy * hy)[push_y]
            # kill only the velocity component driving into the face
            into_x = push_x & (lv[:, 0] * sx < 0.0)
            into_y = push_y & (lv[:, 1] * sy < 0.0)
            lv[into_x, 0] = 0.0
            lv[into_y, 1] = 0.0
            pos = np.where(inside[:, None], rotate2d(local, yaw) + c, pos)
            vel = np.where(inside[:, None], rotate2d(lv, yaw), vel)
        if not any_push:
            break
    return pos, vel


def step_batch(state: BatchState, actions: np.ndarray, cfg: StepConfig,
               blockers=()) -> BatchState:
    """Advance a batch of characters by one control step (semi-implicit Euler).

    Non-finite actions propagate into the state and are caught by fall
    detection, so a faulted environment terminates and resets rather than
    poisoning its neighbors.
    """
    a = np.clip(np.asarray(actions, dtype=float), -1.0, 1.0)
    pos = state.root_pos.copy()
    vel = state.root_vel.copy()
    heading = state.heading.copy()
    posture = state.posture.copy()
    height = state.root_height.copy()

    yaw_rate = a[:, 2] * cfg.turn_gain
    dt = cfg.sim_dt
    for _ in range(cfg.control_substeps):
        heading = normalize_angle(heading + yaw_rate * dt)
        accel = rotate2d(a[:, :2] * cfg.accel_gain, heading)
        vel = vel + accel * dt
        vel = vel * max(0.0, 1.0 - cfg.drag * dt)
        speed = np.linalg.norm(vel, axis=1)
        over = speed > cfg.max_speed
        if over.any():
            vel[over] *= (cfg.max_speed / speed[over])[:, None]
        pos = pos + vel * dt
        posture = np.clip(posture + a[:, 3] * cfg.posture_gain * dt, 0.0, 1.0)
        height = np.clip(height + a[:, 4] * cfg.height_gain * dt,
                         cfg.min_root_height, cfg.max_root_height)
        if blockers:
            pos, vel = _resolve_collisions(pos, vel, blockers, cfg.char_radius)

    head, foot = derive_heights(posture, height, cfg)
    return BatchState(root_pos=pos, root_height=height, heading=heading, root_vel=vel,
                      yaw_rate=yaw_rate, posture=posture, head_height=head,
                      foot_height=foot)


def step(state: SurrogateState, action: Action, cfg: StepConfig,
         blockers=()) -> SurrogateState:
    """Single-character step; raises SimulationFaultError on non-finite input."""
    arr = action.as_array()
    if not (np.isfinite(arr).all() and np.isfinite(state.x_root).all()
            and np.isfinite(state.root_vel).all() and math.isfinite(state.heading)
            and math.isfinite(state.posture)):
        raise SimulationFaultError("non-finite state or action")
    batch = BatchState.from_states([state])
    return step_batch(batch, arr[None, :], cfg, blockers).select(0)


# Observation layout (13 scalars):
#   [0]     root height (world)
#   [1:7]   heading as 6D rotation (world)
#   [7:9]   root linear velocity in the local frame
#   [9]     yaw rate
#   [10]    posture
#   [11]    head height (world)
#   [12]    foot height (world)
OBS_DIM = 13


def observe_batch(state: BatchState) -> np.ndarray:
    """(N, 13) observation per the layout above."""
    r6 = rotation6d_encode(state.heading)
    local_vel = rotate2d(state.root_vel, -state.heading)
    return np.concatenate(
        [state.root_height[:, None], r6, local_vel, state.yaw_rate[:, None],
         state.posture[:, None], state.head_height[:, None], state.foot_height[:, None]],
        axis=1)


def observe(state: SurrogateState) -> np.ndarray:
    """(13,) observation for a single character."""
    return observe_batch(BatchState.from_states([state]))[0]


def detect_fall_batch(state: BatchState) -> np.ndarray:
    """True where the root has collapsed without sitting, or state is non-finite."""
    collapsed = (state.root_height < 0.15) & (state.posture < 0.5)
    return collapsed | ~state.finite_mask()


def detect_fall(state: SurrogateState) -> bool:
    return bool(detect_fall_batch(BatchState.from_states([state]))[0])

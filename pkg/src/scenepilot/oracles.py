"""Scripted closed-loop controllers for each task.

These stateless P-controllers stand in for reference motion data: rolled out
through the same environments as the learner, they produce the transition
distribution the discriminator treats as "real", provide initial states for
reference-state initialization, and serve as a sanity baseline for
evaluation.  Each controller maps the current vectorized environment state to
actions; no internal state, so any mid-episode state yields sensible control.
"""

from __future__ import annotations

import math

import numpy as np

from .character import BatchState, StepConfig, SurrogateState
from .geom import normalize_angle, rotate2d
from .tasks import VecTaskEnv

_EPS = 1e-9


def rsi_walk_sampler(rng: np.random.Generator, step_cfg: StepConfig = None,
                     speed_range=(0.0, 1.5)) -> SurrogateState:
    """Random mid-walk state: standing posture, random heading and speed."""
    cfg = step_cfg if step_cfg is not None else StepConfig()
    heading = rng.uniform(-math.pi, math.pi)
    state = SurrogateState.standing(cfg, heading=heading,
                                    speed=rng.uniform(*speed_range))
    state.yaw_rate = rng.uniform(-0.5, 0.5)
    return state


def _steer(state: BatchState, target_xy, cfg: StepConfig, speed_cap,
           face_heading=None, approach_gain: float = 2.0,
           vel_gain: float = 3.0, turn_p: float = 2.0) -> np.ndarray:
    """Planar channels (forward, lateral, turn) driving the root to target_xy.

    Velocity command shrinks with distance so the character decelerates into
    the target; a drag feedforward keeps cruise speed accurate.
    """
    to = np.asarray(target_xy) - state.root_pos
    dist = np.linalg.norm(to, axis=1)
    direction = to / np.maximum(dist, _EPS)[:, None]
    speed = np.minimum(np.asarray(speed_cap), approach_gain * dist)
    v_des = direction * speed[:, None]
    a_world = vel_gain * (v_des - state.root_vel) + cfg.drag * v_des
    a_local = rotate2d(a_world, -state.heading) / cfg.accel_gain
    if face_heading is None:
        moving = speed > 0.05
        face_heading = np.where(moving, np.arctan2(v_des[:, 1], v_des[:, 0]),
                                state.heading)
    err = normalize_angle(np.asarray(face_heading) - state.heading)
    turn = turn_p * err / cfg.turn_gain
    act = np.zeros((state.n, 5))
    act[:, 0:2] = np.clip(a_local, -1.0, 1.0)
    act[:, 2] = np.clip(turn, -1.0, 1.0)
    return act


def _track_scalar(current, desired, gain: float, tau: float) -> np.ndarray:
    """Rate channel moving `current` toward `desired` with time constant tau."""
    return np.clip((np.asarray(desired) - current) / (gain * tau), -1.0, 1.0)


def _posture_height(act, state: BatchState, cfg: StepConfig, p_des, h_des,
                    tau: float = 0.4) -> np.ndarray:
    act[:, 3] = _track_scalar(state.posture, p_des, cfg.posture_gain, tau)
    act[:, 4] = _track_scalar(state.root_height, h_des, cfg.height_gain, tau)
    return act


class FollowOracle:
    """Track the path point a short lookahead ahead of the current time."""

    def __init__(self, lookahead_s: float = 0.4, speed_cap: float = 1.8):
        self.lookahead_s = lookahead_s
        self.speed_cap = speed_cap

    def __call__(self, env: VecTaskEnv) -> np.ndarray:
        cfg = env.step_cfg
        t = env.episode_step * cfg.control_dt
        ahead = env.bank.query(t + self.lookahead_s)
        act = _steer(env.state, ahead, cfg, self.speed_cap)
        return _posture_height(act, env.state, cfg, 0.0, cfg.stand_root_height)


class SitOracle:
    """Walk to the seat front, then settle onto the seat while turning to the
    object's facing direction and lowering onto it.

    Sitting engages inside `engage_dist`: posture and height ramp with
    remaining distance, which paces the transition over roughly 1.5 s at
    walking approach speeds.
    """

    def __init__(self, engage_dist: float = 1.0, approach_speed: float = 1.4,
                 settle_speed: float = 0.7):
        self.engage_dist = engage_dist
        self.approach_speed = approach_speed
        self.settle_speed = settle_speed

    def __call__(self, env: VecTaskEnv) -> np.ndarray:
        cfg = env.step_cfg
        state = env.state
        seat = env.obj_target
        front = seat[:, :2] + 0.8 * env.obj_facing
        d_seat = np.linalg.norm(seat[:, :2] - state.root_pos, axis=1)
        engaged = d_seat <= self.engage_dist

        target = np.where(engaged[:, None], seat[:, :2], front)
        cap = np.where(engaged, self.settle_speed, self.approach_speed)
        facing_yaw = np.arctan2(env.obj_facing[:, 1], env.obj_facing[:, 0])
        act_walk = _steer(state, target, cfg, cap)
        act_face = _steer(state, target, cfg, cap, face_heading=facing_yaw)
        act = np.where(engaged[:, None], act_face, act_walk)

        p_des = np.where(engaged, np.clip(1.0 - d_seat / 0.7, 0.0, 1.0), 0.0)
        h_des = cfg.stand_root_height + (seat[:, 2] - cfg.stand_root_height) * p_des
        return _posture_height(act, state, cfg, p_des, h_des)


class GetupOracle:
    """Rise to standing height while tracking the shrinking forward target."""

    def __init__(self, tau: float = 0.6):
        self.tau = tau

    def __call__(self, env: VecTaskEnv) -> np.ndarray:
        cfg = env.step_cfg
        state = env.state
        g = env._g_tar(state)
        act = _steer(state, g[:, :2], cfg, speed_cap=0.6, face_heading=state.heading)
        return _posture_height(act, state, cfg, 0.0, g[:, 2], tau=self.tau)


class LiedownOracle(SitOracle):
    """Sit-style approach; the lie posture mode maps posture onto reclining."""


class LieGetupOracle(GetupOracle):
    """Same rising control; the target height comes from the task."""


_ORACLES = {
    "sit": SitOracle,
    "getup": GetupOracle,
    "liedown": LiedownOracle,
    "lie_getup": LieGetupOracle,
    "traj": FollowOracle,
}


def oracle_for(kind: str):
    if kind not in _ORACLES:
        raise ValueError(f"no oracle for task kind {kind!r}")
    return _ORACLES[kind]()

"""PPO with GAE plus an adversarial style reward.

Each iteration collects a fixed-horizon rollout across vectorized
environments, mixes the task reward with a discriminator-based style reward
r = w_task * rG + w_style * rS, runs clipped-surrogate policy and value
updates, then updates the discriminator on agent transitions against
reference transitions produced by the scripted controllers.

Settle and timeout endings are truncations: the value of the final
observation is folded into that step's reward (discounted once) before GAE,
so cutting an episode short never penalizes reaching the goal.

Observations are normalized with running statistics at collection time and
stored normalized; the discriminator keeps separate statistics over raw
transition pairs.  All randomness derives from one seed, so a rerun with the
same config reproduces the metrics file byte for byte.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .character import OBS_DIM, StepConfig
from .net import (Adam, GaussianPolicy, Mlp, RunningMeanStd, clip_grads,
                  global_grad_norm, load_checkpoint, save_checkpoint)
from .oracles import oracle_for, rsi_walk_sampler
from .tasks import OBJ_GOAL_DIM, TERMINATION_NAMES, PoseDB, TaskConfig, VecTaskEnv

ACT_DIM = 5
STYLE_REWARD_FLOOR = 1e-4

METRICS_HEADER = ("iter,mean_task_reward,mean_style_reward,success_rate,"
                  "mean_ep_len,policy_loss,value_loss,disc_loss")


@dataclass
class TrainerConfig:
    """Optimization constants.  Desk-scale defaults; the full-scale values
    from the source configuration are 6144 envs, batch 16384/4096, and hidden
    layers (1024, 512)."""

    num_envs: int = 256
    horizon: int = 32
    ppo_batch: int = 4096
    amp_batch: int = 1024
    lr: float = 5e-5
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    w_task: float = 0.5
    w_style: float = 0.5
    hidden: tuple = (128, 64)
    ppo_epochs: int = 2
    grad_clip: float = 1.0
    gp_weight: float = 5.0
    iterations: int = 2000
    seed: int = 0
    reference_transitions: int = 40000
    reference_envs: int = 64
    checkpoint_every: int = 500
    stats_window: int = 500  # completed episodes in the rolling success window
    early_stop_success: float = 0.0  # stop once rolling success reaches this; 0 disables
    early_stop_min_iters: int = 50

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")
        if self.num_envs < 1 or self.horizon < 1:
            raise ValueError("num_envs and horizon must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class TransitionBatch:
    """One rollout: arrays shaped (num_envs, horizon) plus trailing dims."""

    obs: np.ndarray  # normalized, (N, T, obs_dim)
    actions: np.ndarray  # (N, T, act_dim)
    log_probs: np.ndarray  # (N, T)
    task_rewards: np.ndarray  # (N, T)
    style_rewards: np.ndarray  # (N, T)
    rewards: np.ndarray  # mixed + truncation bootstrap, (N, T)
    values: np.ndarray  # (N, T)
    dones: np.ndarray  # (N, T)
    term_codes: np.ndarray  # (N, T)
    disc_pairs: np.ndarray  # raw, (N, T, disc_dim)
    bootstrap_value: np.ndarray  # (N,)


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float,
                lam: float):
    """Standard recursive generalized advantage estimation.

    `dones` masks the episode boundary: no value or advantage flows across a
    terminated step.  Returns (advantages, returns) with returns = adv + V.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    n, t = r.shape
    adv = np.zeros((n, t))
    last = np.zeros(n)
    for k in range(t - 1, -1, -1):
        next_v = np.asarray(bootstrap_value, dtype=float) if k == t - 1 else v[:, k + 1]
        mask = 1.0 - d[:, k]
        delta = r[:, k] + gamma * next_v * mask - v[:, k]
        last = delta + gamma * lam * mask * last
        adv[:, k] = last
    return adv, adv + v


def make_env(task_cfg: TaskConfig, n_envs: int, rng: np.random.Generator,
             objects=None, pose_db: PoseDB = None, step_cfg: StepConfig = None,
             bounds=(-8.0, -8.0, 8.0, 8.0)) -> VecTaskEnv:
    """Environment with the default walk-state initialization wired in."""
    sampler = None
    if task_cfg.kind in ("sit", "liedown"):
        base = step_cfg if step_cfg is not None else StepConfig()
        speed_range = task_cfg.rsi_speed_range

        def sampler(r):
            return rsi_walk_sampler(r, base, speed_range)

    return VecTaskEnv(task_cfg, n_envs, rng, objects=objects, pose_db=pose_db,
                      rsi_sampler=sampler, step_cfg=step_cfg, bounds=bounds)


def disc_input_dim(task_cfg: TaskConfig) -> int:
    """Transition pair (s, s') plus object goal conditioning for object tasks."""
    return 2 * OBS_DIM + (0 if task_cfg.kind == "traj" else OBJ_GOAL_DIM)


def _disc_pairs(prev_obs_raw, res, include_goal: bool) -> np.ndarray:
    prev_char = prev_obs_raw[:, :OBS_DIM]
    next_char = np.where(res.done[:, None], res.terminal_obs[:, :OBS_DIM],
                         res.obs[:, :OBS_DIM])
    parts = [prev_char, next_char]
    if include_goal:
        parts.append(prev_obs_raw[:, OBS_DIM:OBS_DIM + OBJ_GOAL_DIM])
    return np.concatenate(parts, axis=1)


class ReferenceMotionSource:
    """Transition pairs from scripted controllers, standing in for motion data.

    Rolls the task's oracle through a fresh environment until the buffer holds
    `n_transitions` raw discriminator inputs.
    """

    def __init__(self, task_cfg: TaskConfig, rng: np.random.Generator,
                 n_transitions: int, objects=None, pose_db: PoseDB = None,
                 n_envs: int = 64, step_cfg: StepConfig = None):
        env = make_env(task_cfg, n_envs, rng, objects=objects, pose_db=pose_db,
                       step_cfg=step_cfg)
        oracle = oracle_for(task_cfg.kind)
        include_goal = task_cfg.kind != "traj"
        rows = []
        total = 0
        obs = env.observe()
        while total < n_transitions:
            res = env.step(oracle(env))
            pair = _disc_pairs(obs, res, include_goal)
            rows.append(pair)
            total += len(pair)
            obs = res.obs
        self.data = np.concatenate(rows, axis=0)[:n_transitions]

    def __len__(self) -> int:
        return len(self.data)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.data[rng.integers(0, len(self.data), n)]


def discriminator_reward(disc: Mlp, disc_rms: RunningMeanStd,
                         pairs_raw) -> np.ndarray:
    """r_S = max(1e-4, 1 - 0.25 (D - 1)^2) on normalized transition pairs."""
    d = np.atleast_2d(disc.forward(disc_rms.normalize(pairs_raw)))[:, 0]
    return np.maximum(STYLE_REWARD_FLOOR, 1.0 - 0.25 * (d - 1.0) ** 2)


def discriminator_update(disc: Mlp, opt: Adam, disc_rms: RunningMeanStd,
                         agent_raw, ref_raw, cfg: TrainerConfig) -> float:
    """Least-squares GAN step: reference -> +1, agent -> -1, gradient penalty
    on reference samples.  Restores parameters if the loss goes non-finite."""
    disc_rms.update(agent_raw)
    disc_rms.update(ref_raw)
    a = disc_rms.normalize(agent_raw)
    r = disc_rms.normalize(ref_raw)
    da, cache_a = disc.forward(a, want_cache=True)
    dr, cache_r = disc.forward(r, want_cache=True)
    da = da[:, 0]
    dr = dr[:, 0]
    loss_cls = float(np.mean((dr - 1.0) ** 2) + np.mean((da + 1.0) ** 2))
    g_ref, _ = disc.backward(cache_r, (2.0 * (dr - 1.0) / len(dr))[:, None])
    g_agent, _ = disc.backward(cache_a, (2.0 * (da + 1.0) / len(da))[:, None])
    gp, g_pen = disc.gradient_penalty(r)
    grads = [gr + ga + cfg.gp_weight * gpen
             for gr, ga, gpen in zip(g_ref, g_agent, g_pen)]
    loss = loss_cls + cfg.gp_weight * gp
    if not np.isfinite(loss) or not np.isfinite(global_grad_norm(grads)):
        return loss
    clip_grads(grads, cfg.grad_clip)
    opt.step(disc.parameters(), grads)
    return loss


@dataclass
class RolloutStats:
    mean_task_reward: float = 0.0
    mean_style_reward: float = 0.0
    episodes: list = field(default_factory=list)  # (success, ep_len_steps) pairs


def collect_rollout(env: VecTaskEnv, policy: GaussianPolicy, value_net: Mlp,
                    disc: Mlp, obs_rms: RunningMeanStd, disc_rms: RunningMeanStd,
                    cfg: TrainerConfig, rng: np.random.Generator):
    """One horizon of experience for every environment.

    Observation statistics update as data arrives; stored observations are
    normalized with the statistics in effect when the policy saw them, so the
    first update epoch reproduces the collection-time ratios exactly.
    """
    n, t = env.n, cfg.horizon
    include_goal = env.cfg.kind != "traj"
    batch = TransitionBatch(
        obs=np.zeros((n, t, env.obs_dim)),
        actions=np.zeros((n, t, ACT_DIM)),
        log_probs=np.zeros((n, t)),
        task_rewards=np.zeros((n, t)),
        style_rewards=np.zeros((n, t)),
        rewards=np.zeros((n, t)),
        values=np.zeros((n, t)),
        dones=np.zeros((n, t), dtype=bool),
        term_codes=np.zeros((n, t), dtype=int),
        disc_pairs=np.zeros((n, t, disc_input_dim(env.cfg))),
        bootstrap_value=np.zeros(n),
    )
    stats = RolloutStats()
    obs_raw = env.observe()
    for k in range(t):
        obs_rms.update(obs_raw)
        obs_n = obs_rms.normalize(obs_raw)
        actions, logp = policy.sample(obs_n, rng)
        values = np.atleast_2d(value_net.forward(obs_n))[:, 0]
        res = env.step(actions)
        pairs = _disc_pairs(obs_raw, res, include_goal)
        style = discriminator_reward(disc, disc_rms, pairs)
        mixed = cfg.w_task * res.reward + cfg.w_style * style
        if res.truncated.any():
            idx = np.flatnonzero(res.truncated)
            term_n = obs_rms.normalize(res.terminal_obs[idx])
            term_v = np.atleast_2d(value_net.forward(term_n))[:, 0]
            mixed[idx] += cfg.gamma * term_v
        batch.obs[:, k] = obs_n
        batch.actions[:, k] = actions
        batch.log_probs[:, k] = logp
        batch.task_rewards[:, k] = res.reward
        batch.style_rewards[:, k] = style
        batch.rewards[:, k] = mixed
        batch.values[:, k] = values
        batch.dones[:, k] = res.done
        batch.term_codes[:, k] = res.term_code
        batch.disc_pairs[:, k] = pairs
        for i in np.flatnonzero(res.done):
            stats.episodes.append((bool(res.success[i]), int(res.ep_len[i])))
        obs_raw = res.obs
    batch.bootstrap_value = np.atleast_2d(
        value_net.forward(obs_rms.normalize(obs_raw)))[:, 0]
    stats.mean_task_reward = float(batch.task_rewards.mean())
    stats.mean_style_reward = float(batch.style_rewards.mean())
    return batch, stats


def ppo_update(policy: GaussianPolicy, value_net: Mlp, policy_opt: Adam,
               value_opt: Adam, batch: TransitionBatch, advantages, returns,
               cfg: TrainerConfig, rng: np.random.Generator):
    """Clipped-surrogate policy step and value regression over the rollout.

    Advantages are normalized across the whole update.  A non-finite loss or
    gradient aborts the update and restores the pre-update parameters and
    optimizer state.  Returns (policy_loss, value_loss, aborted).
    """
    n, t, obs_dim = batch.obs.shape
    obs = batch.obs.reshape(n * t, obs_dim)
    acts = batch.actions.reshape(n * t, ACT_DIM)
    logp_old = batch.log_probs.reshape(n * t)
    adv = np.asarray(advantages, dtype=float).reshape(n * t)
    ret = np.asarray(returns, dtype=float).reshape(n * t)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    snap = (policy.net.copy_parameters(), value_net.copy_parameters(),
            policy_opt.state_arrays(), value_opt.state_arrays())
    p_losses, v_losses = [], []
    eps = cfg.clip_eps
    total = n * t
    for _ in range(cfg.ppo_epochs):
        perm = rng.permutation(total)
        for start in range(0, total, cfg.ppo_batch):
            idx = perm[start:start + cfg.ppo_batch]
            if len(idx) < 2:
                continue
            o = obs[idx]
            a = acts[idx]
            adv_b = adv[idx]
            mu, cache = policy.net.forward(o, want_cache=True)
            logp = policy.log_prob_given_mean(mu, a)
            ratio = np.exp(logp - logp_old[idx])
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
            surr = np.minimum(ratio * adv_b, clipped * adv_b)
            p_loss = -float(np.mean(surr))
            # gradient flows only where the unclipped branch is active
            flow = np.where(adv_b >= 0.0, ratio <= 1.0 + eps, ratio >= 1.0 - eps)
            coeff = -(adv_b * ratio * flow) / len(idx)
            dmu = coeff[:, None] * policy.dlogp_dmean(mu, a)
            p_grads, _ = policy.net.backward(cache, dmu)

            v, v_cache = value_net.forward(o, want_cache=True)
            v = v[:, 0]
            v_err = v - ret[idx]
            v_loss = 0.5 * float(np.mean(v_err ** 2))
            v_grads, _ = value_net.backward(v_cache, (v_err / len(idx))[:, None])

            finite = (np.isfinite(p_loss) and np.isfinite(v_loss)
                      and np.isfinite(global_grad_norm(p_grads))
                      and np.isfinite(global_grad_norm(v_grads)))
            if not finite:
                policy.net.set_parameters(snap[0])
                value_net.set_parameters(snap[1])
                policy_opt.load_arrays(snap[2])
                value_opt.load_arrays(snap[3])
                return float("nan"), float("nan"), True
            clip_grads(p_grads, cfg.grad_clip)
            clip_grads(v_grads, cfg.grad_clip)
            policy_opt.step(policy.net.parameters(), p_grads)
            value_opt.step(value_net.parameters(), v_grads)
            p_losses.append(p_loss)
            v_losses.append(v_loss)
    return float(np.mean(p_losses)), float(np.mean(v_losses)), False


@dataclass
class PolicyBundle:
    """A trained policy plus the observation statistics it expects."""

    policy: GaussianPolicy
    obs_rms: RunningMeanStd
    meta: dict

    def act_mean(self, obs_raw) -> np.ndarray:
        return np.atleast_2d(self.policy.net.forward(self.obs_rms.normalize(obs_raw)))

    def act_sample(self, obs_raw, rng: np.random.Generator) -> np.ndarray:
        actions, _ = self.policy.sample(self.obs_rms.normalize(obs_raw), rng)
        return actions

    def actor(self):
        """Deterministic mean-action callable with the (env, obs) signature."""
        return lambda env, obs: self.act_mean(obs)


def save_training_state(path, policy: GaussianPolicy, value_net: Mlp, disc: Mlp,
                        obs_rms: RunningMeanStd, disc_rms: RunningMeanStd,
                        meta: dict) -> None:
    arrays = {
        "policy": policy.net.state_arrays(),
        "value": value_net.state_arrays(),
        "disc": disc.state_arrays(),
        "obs_rms": obs_rms.state_arrays(),
        "disc_rms": disc_rms.state_arrays(),
    }
    meta = dict(meta)
    meta["policy_std"] = policy.std
    save_checkpoint(path, arrays, meta)


def load_policy_bundle(path) -> PolicyBundle:
    arrays, meta = load_checkpoint(path)
    net = Mlp.from_arrays(arrays["policy"])
    policy = GaussianPolicy.__new__(GaussianPolicy)
    policy.net = net
    policy.std = float(meta.get("policy_std", 0.055))
    policy.act_dim = net.sizes[-1]
    rms = RunningMeanStd(net.sizes[0])
    rms.load_arrays(arrays["obs_rms"])
    return PolicyBundle(policy=policy, obs_rms=rms, meta=meta)


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class TrainResult:
    out_dir: str
    metrics_path: str
    checkpoint_path: str
    iterations_run: int
    success_rate: float
    bundle: PolicyBundle


def train(task_cfg: TaskConfig, cfg: TrainerConfig, out_dir,
          objects=None, pose_db: PoseDB = None, step_cfg: StepConfig = None,
          log=None) -> TrainResult:
    """Full training loop; writes metrics.csv and checkpoints under out_dir.

    Deterministic for a fixed (task_cfg, cfg): every random stream is spawned
    from cfg.seed and the metrics file is formatted reproducibly.
    """
    os.makedirs(out_dir, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(6)
    r_env, r_init, r_ref, r_act, r_shuffle, r_amp = \
        (np.random.default_rng(s) for s in seeds)

    env = make_env(task_cfg, cfg.num_envs, r_env, objects=objects,
                   pose_db=pose_db, step_cfg=step_cfg)
    d_dim = disc_input_dim(task_cfg)
    policy = GaussianPolicy(env.obs_dim, ACT_DIM, cfg.hidden, r_init)
    value_net = Mlp((env.obs_dim,) + cfg.hidden + (1,), r_init)
    disc = Mlp((d_dim,) + cfg.hidden + (1,), r_init)
    obs_rms = RunningMeanStd(env.obs_dim)
    disc_rms = RunningMeanStd(d_dim)
    policy_opt = Adam(policy.net.parameters(), lr=cfg.lr)
    value_opt = Adam(value_net.parameters(), lr=cfg.lr)
    disc_opt = Adam(disc.parameters(), lr=cfg.lr)
    reference = ReferenceMotionSource(task_cfg, r_ref, cfg.reference_transitions,
                                      objects=objects, pose_db=pose_db,
                                      n_envs=cfg.reference_envs, step_cfg=step_cfg)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.npz")
    window = deque(maxlen=cfg.stats_window)
    meta_base = {"task_kind": task_cfg.kind, "obs_dim": env.obs_dim,
                 "goal_dim": env.goal_dim, "act_dim": ACT_DIM,
                 "seed": cfg.seed, "trainer": asdict(cfg)}
    success_rate = 0.0
    it = 0
    with open(metrics_path, "w") as mf:
        mf.write(METRICS_HEADER + "\n")
        for it in range(1, cfg.iterations + 1):
            batch, stats = collect_rollout(env, policy, value_net, disc,
                                           obs_rms, disc_rms, cfg, r_act)
            # truncation bootstrap already folded into batch.rewards
            adv, ret = compute_gae(batch.rewards, batch.values, batch.dones,
                                   batch.bootstrap_value, cfg.gamma, cfg.gae_lambda)
            p_loss, v_loss, aborted = ppo_update(policy, value_net, policy_opt,
                                                 value_opt, batch, adv, ret,
                                                 cfg, r_shuffle)
            flat_pairs = batch.disc_pairs.reshape(-1, d_dim)
            agent = flat_pairs[r_amp.integers(0, len(flat_pairs), cfg.amp_batch)]
            ref = reference.sample(r_amp, cfg.amp_batch)
            d_loss = discriminator_update(disc, disc_opt, disc_rms, agent, ref, cfg)

            window.extend(stats.episodes)
            if window:
                success_rate = float(np.mean([s for s, _ in window]))
                mean_len = float(np.mean([l for _, l in window]))
            else:
                mean_len = 0.0
            row = [str(it), _fmt(stats.mean_task_reward), _fmt(stats.mean_style_reward),
                   _fmt(success_rate), _fmt(mean_len), _fmt(p_loss), _fmt(v_loss),
                   _fmt(d_loss)]
            mf.write(",".join(row) + "\n")
            if log is not None and (it % 25 == 0 or it == 1):
                log(f"iter {it}: task_r {stats.mean_task_reward:.3f} "
                    f"style_r {stats.mean_style_reward:.3f} succ {success_rate:.3f} "
                    f"aborted {aborted}")
            if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                save_training_state(ckpt_path, policy, value_net, disc, obs_rms,
                                    disc_rms, dict(meta_base, iteration=it))
            if (cfg.early_stop_success > 0.0 and it >= cfg.early_stop_min_iters
                    and len(window) >= cfg.stats_window
                    and success_rate >= cfg.early_stop_success):
                break
    save_training_state(ckpt_path, policy, value_net, disc, obs_rms, disc_rms,
                        dict(meta_base, iteration=it))
    bundle = PolicyBundle(policy=policy, obs_rms=obs_rms,
                          meta=dict(meta_base, iteration=it))
    return TrainResult(out_dir=str(out_dir), metrics_path=metrics_path,
                       checkpoint_path=ckpt_path, iterations_run=it,
                       success_rate=success_rate, bundle=bundle)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EpisodeRecord:
    """One evaluation episode: timings in seconds, error in meters."""

    index: int
    success: bool
    ep_len_s: float
    exec_time_s: float  # first entry into the success radius; nan if never
    final_error_m: float
    term_kind: str
    object_id: str = ""


def evaluate(actor, task_cfg: TaskConfig, n_episodes: int, seed: int,
             objects=None, pose_db: PoseDB = None, n_envs: int = None,
             step_cfg: StepConfig = None, bounds=(-8.0, -8.0, 8.0, 8.0)) -> list:
    """Deterministic-protocol evaluation: full-length episodes (no settle
    termination), success = final distance inside the radius.

    `actor` is called as actor(env, raw_obs) -> actions, so policies, scripted
    controllers, and random baselines share one interface.
    """
    eval_cfg = replace(task_cfg, settle_steps=0)
    if n_envs is None:
        n_envs = min(n_episodes, 64)
    rng = np.random.default_rng(seed)
    env = make_env(eval_cfg, n_envs, rng, objects=objects, pose_db=pose_db,
                   step_cfg=step_cfg, bounds=bounds)
    dt = env.step_cfg.control_dt
    records = []
    obs = env.observe()
    while len(records) < n_episodes:
        res = env.step(actor(env, obs))
        for i in np.flatnonzero(res.done):
            if len(records) >= n_episodes:
                break
            first = res.first_in_step[i]
            records.append(EpisodeRecord(
                index=len(records), success=bool(res.success[i]),
                ep_len_s=float(res.ep_len[i] * dt),
                exec_time_s=float(first * dt) if first >= 0 else float("nan"),
                final_error_m=float(res.dist[i]),
                term_kind=TERMINATION_NAMES[res.term_code[i]],
                object_id=res.object_ids[i]))
        obs = res.obs
    return records


def success_rate(records) -> float:
    return float(np.mean([r.success for r in records])) if records else 0.0

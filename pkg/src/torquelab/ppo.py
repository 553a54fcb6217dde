"""PPO with clipped surrogate and clipped value loss over parallel envs.

On-policy loop: collect a fixed-horizon rollout from n_envs environments
stepped in lockstep (fixed env-index order, hence reproducible), compute
GAE advantages, then run several epochs of shuffled minibatch updates with
an Adam optimizer and a linearly decaying learning rate.

Loss arithmetic (log probs, ratios, losses) is computed in float64 from the
network's float32 outputs; gradients are cast back to the parameter dtype
for backprop. Actions are sampled from a diagonal Gaussian around the
policy means; evaluation uses the deterministic means.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .network import MLPPolicy, PolicySpec, save_checkpoint, config_hash
from .telemetry import StepRecord, record_from_info

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Distribution helpers
# ---------------------------------------------------------------------------

def gaussian_log_prob(actions, means, log_std) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over action dims (float64)."""
    a = np.asarray(actions, dtype=np.float64)
    m = np.asarray(means, dtype=np.float64)
    ls = np.asarray(log_std, dtype=np.float64)
    z = (a - m) / np.exp(ls)
    return -0.5 * np.sum(z * z + LOG_2PI, axis=-1) - np.sum(ls)


def gaussian_entropy(log_std) -> float:
    """Entropy of the diagonal Gaussian (state independent)."""
    ls = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(ls + 0.5 * (LOG_2PI + 1.0)))


def sample_action(means, log_std, rng: np.random.Generator | None = None,
                  deterministic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sample raw (unclamped) actions and their log probability.

    deterministic=True returns the means themselves together with their own
    density under the current distribution."""
    m = np.asarray(means, dtype=np.float64)
    if deterministic:
        return m.copy(), gaussian_log_prob(m, m, log_std)
    std = np.exp(np.asarray(log_std, dtype=np.float64))
    noise = rng.standard_normal(m.shape)
    actions = m + std * noise
    return actions, gaussian_log_prob(actions, m, log_std)


# ---------------------------------------------------------------------------
# Advantage estimation
# ---------------------------------------------------------------------------

def gae(rewards, values, dones, bootstrap, gamma: float,
        lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over (n_envs, T) arrays.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    returns = A + V. 1-D inputs are treated as a single env.
    """
    r = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dones, dtype=bool))
    if not (r.shape == v.shape == d.shape):
        raise ValueError("rewards, values and dones must have matching shapes")
    boot = np.asarray(bootstrap, dtype=np.float64).reshape(r.shape[0])
    adv = np.zeros_like(r)
    next_v = boot
    next_a = np.zeros(r.shape[0])
    for t in range(r.shape[1] - 1, -1, -1):
        live = 1.0 - d[:, t]
        delta = r[:, t] + gamma * next_v * live - v[:, t]
        next_a = delta + gamma * lam * live * next_a
        adv[:, t] = next_a
        next_v = v[:, t]
    returns = adv + v
    if np.asarray(rewards).ndim == 1:
        return adv[0], returns[0]
    return adv, returns


def lr_schedule(progress: float, lr_start: float = 2.5e-4,
                lr_end: float = 0.5e-4) -> float:
    """Linear decay over training progress (fraction of max steps), clamped."""
    p = min(max(progress, 0.0), 1.0)
    return lr_start + (lr_end - lr_start) * p


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, policy: MLPPolicy, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p) for n, p in policy.params.items()}
        self.v = {n: np.zeros_like(p) for n, p in policy.params.items()}

    def step(self, policy: MLPPolicy, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for n, p in policy.params.items():
            g = grads[n]
            m = self.m[n]
            v = self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to a global L2 norm cap; returns the norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# Rollout storage
# ---------------------------------------------------------------------------

class RolloutBuffer:
    """Fixed-capacity on-policy batch across (env, time)."""

    def __init__(self, n_envs: int, horizon: int, obs_dim: int, action_dim: int):
        self.n_envs, self.horizon = n_envs, horizon
        self.obs = np.zeros((n_envs, horizon, obs_dim), dtype=np.float32)
        self.actions = np.zeros((n_envs, horizon, action_dim), dtype=np.float64)
        self.log_probs = np.zeros((n_envs, horizon), dtype=np.float64)
        self.values = np.zeros((n_envs, horizon), dtype=np.float64)
        self.rewards = np.zeros((n_envs, horizon), dtype=np.float64)
        self.dones = np.zeros((n_envs, horizon), dtype=bool)
        self.bootstrap = np.zeros(n_envs, dtype=np.float64)
        self.advantages = None
        self.returns = None
        self.pos = 0

    def add_column(self, obs, actions, log_probs, values, rewards, dones) -> None:
        t = self.pos
        if t >= self.horizon:
            raise ValueError("rollout buffer is full")
        self.obs[:, t] = obs
        self.actions[:, t] = actions
        self.log_probs[:, t] = log_probs
        self.values[:, t] = values
        self.rewards[:, t] = rewards
        self.dones[:, t] = dones
        self.pos = t + 1

    @property
    def full(self) -> bool:
        return self.pos == self.horizon

    def compute_advantages(self, gamma: float, lam: float) -> None:
        self.advantages, self.returns = gae(self.rewards, self.values,
                                            self.dones, self.bootstrap,
                                            gamma, lam)

    def flat(self):
        n = self.n_envs * self.horizon
        return (self.obs.reshape(n, -1), self.actions.reshape(n, -1),
                self.log_probs.reshape(n), self.values.reshape(n),
                self.advantages.reshape(n), self.returns.reshape(n))

    def reset(self) -> None:
        self.pos = 0
        self.advantages = None
        self.returns = None


# ---------------------------------------------------------------------------
# The clipped-surrogate update
# ---------------------------------------------------------------------------

def ppo_loss_and_grads(policy: MLPPolicy, obs, actions, old_log_probs,
                       advantages, returns, old_values, cfg) -> tuple[float, dict, dict]:
    """Loss, parameter gradients, and diagnostics for one minibatch.

    loss = -mean(min(ratio*A, clip(ratio, 1 +/- c)*A))
           + value_coef * 0.5 * mean(max((V-R)^2, (V_clip-R)^2))
           - entropy_coef * entropy
    """
    means, values, cache = policy.forward_cache(obs)
    log_std = np.asarray(policy.log_std, dtype=np.float64)
    m64 = np.asarray(means, dtype=np.float64)
    v64 = np.asarray(values, dtype=np.float64)
    a64 = np.asarray(actions, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    n = a64.shape[0]

    std = np.exp(log_std)
    z = (a64 - m64) / std
    log_probs = -0.5 * np.sum(z * z + LOG_2PI, axis=-1) - np.sum(log_std)
    ratio = np.exp(log_probs - old_log_probs)
    clipped = np.clip(ratio, 1.0 - cfg.policy_clip, 1.0 + cfg.policy_clip)
    surr1 = ratio * adv
    surr2 = clipped * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))

    verr = v64 - returns
    vclip = old_values + np.clip(v64 - old_values, -cfg.value_clip, cfg.value_clip)
    verr_c = vclip - returns
    sq1 = verr * verr
    sq2 = verr_c * verr_c
    value_loss = 0.5 * float(np.mean(np.maximum(sq1, sq2)))

    entropy = gaussian_entropy(log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite PPO loss (policy "
                                 f"{policy_loss}, value {value_loss})")

    # d loss / d log_prob: active where the unclipped branch is the minimum
    active = (surr1 <= surr2).astype(np.float64)
    dlogp = -(adv * ratio * active) / n

    d_means = dlogp[:, None] * (z / std)
    d_log_std = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
    d_log_std -= cfg.entropy_coef  # from -entropy_coef * sum(log_std + const)

    # value branch: derivative of max picks the larger squared error
    use_unclipped = sq1 >= sq2
    dv = np.where(use_unclipped, verr,
                  verr_c * (np.abs(v64 - old_values) < cfg.value_clip))
    d_values = cfg.value_coef * dv / n

    grads = policy.backward(cache, d_means.astype(policy.dtype),
                            d_values.astype(policy.dtype))
    grads["log_std"] = d_log_std.astype(policy.dtype)

    stats = {
        "loss": float(loss),
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": float(np.mean((ratio < 1.0 - cfg.policy_clip)
                                       | (ratio > 1.0 + cfg.policy_clip))),
        "approx_kl": float(np.mean((ratio - 1.0) - np.log(np.maximum(ratio, 1e-12)))),
    }
    return float(loss), grads, stats


def ppo_update(policy: MLPPolicy, optimizer: Adam, buffer: RolloutBuffer,
               cfg, lr: float, rng: np.random.Generator) -> dict:
    """Epochs of shuffled minibatch updates over a full rollout buffer."""
    if not buffer.full:
        raise ValueError("rollout buffer is not full")
    if buffer.advantages is None:
        buffer.compute_advantages(cfg.gamma, cfg.gae_lambda)
    obs, actions, old_logp, old_values, advantages, returns = buffer.flat()
    n = obs.shape[0]
    agg: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            adv = advantages[idx]
            if cfg.normalize_advantages:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            loss, grads, stats = ppo_loss_and_grads(
                policy, obs[idx], actions[idx], old_logp[idx], adv,
                returns[idx], old_values[idx], cfg)
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(policy, grads, lr)
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in agg.items()}
    out["lr"] = lr
    return out


# ---------------------------------------------------------------------------
# Training configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    gamma: float = 0.995
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    policy_clip: float = 0.2
    value_clip: float = 0.2
    lr_start: float = 2.5e-4
    lr_end: float = 0.5e-4
    n_envs: int = 24
    batch_size: int = 512
    rollout_horizon: int = 512
    epochs_per_update: int = 10
    max_steps: int = 1_000_000
    eval_interval: int = 10_000
    eval_episodes: int = 1
    eval_max_steps: int = 2400
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    hidden_layers: tuple = (300, 600, 600)
    value_layers: tuple = (600,)
    checkpoint_interval: int = 0  # 0: checkpoint at every evaluation
    seed: int = 0

    def __post_init__(self):
        self.hidden_layers = tuple(int(n) for n in self.hidden_layers)
        self.value_layers = tuple(int(n) for n in self.value_layers)
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.policy_clip <= 0 or self.value_clip <= 0:
            raise ValueError("clip ranges must be > 0")
        if (self.n_envs * self.rollout_horizon) % self.batch_size != 0:
            raise ValueError("batch_size must divide n_envs * rollout_horizon")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    lap_time: float | None
    termination: str
    steps: int
    total_reward: float
    mean_progress: float
    records: list = field(default_factory=list)


def evaluate(policy: MLPPolicy, env, n_episodes: int = 1,
             deterministic: bool = True, max_steps: int = 2400,
             collect_records: bool = False,
             rng: np.random.Generator | None = None) -> list[EpisodeResult]:
    """Roll episodes with the policy (deterministic mean by default)."""
    if rng is None:
        rng = np.random.default_rng(0)
    results = []
    for ep in range(n_episodes):
        obs = env.reset()
        total = 0.0
        progress = 0.0
        records: list[StepRecord] = []
        kind = "none"
        steps = 0
        lap_time = None
        for t in range(max_steps):
            means, _ = policy.forward(obs.astype(np.float32))
            action, _ = sample_action(means, policy.log_std, rng, deterministic)
            res = env.step(action)
            obs = res.observation
            total += res.reward
            progress += res.info["r_progr"]
            steps = t + 1
            if collect_records:
                records.append(record_from_info(steps, res.info))
            if res.terminated:
                kind = res.termination_kind
                lap_time = res.info.get("lap_time")
                break
        results.append(EpisodeResult(lap_time, kind, steps, total,
                                     progress / max(steps, 1), records))
    return results


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    policy: MLPPolicy
    total_steps: int
    log_path: str | None
    checkpoint_paths: list
    best_eval: float | None


class _JsonlLogger:
    def __init__(self, path):
        self.path = path
        self._fh = open(path, "a") if path else None

    def write(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def train(config: TrainConfig, env_factory, out_dir=None,
          initial_policy: MLPPolicy | None = None, initial_step: int = 0,
          on_update=None, telemetry_dir=None) -> TrainResult:
    """Run PPO until max_steps total environment steps.

    env_factory(i) builds environment i; index n_envs is used for the
    dedicated evaluation environment. Stochastic episode completions are
    appended to the training log as 'episode' records, deterministic
    evaluations (every eval_interval steps) as 'eval' records, one 'update'
    record per rollout. Everything is seeded and single-threaded, hence
    bit-reproducible for a fixed config.
    """
    envs = [env_factory(i) for i in range(config.n_envs)]
    eval_env = env_factory(config.n_envs)
    action_dim = envs[0].action_dim
    obs_dim = envs[0].observation_dim
    spec = PolicySpec(input_dim=obs_dim, action_dim=action_dim,
                      shared_layers=config.hidden_layers,
                      value_layers=config.value_layers)
    policy = initial_policy if initial_policy is not None \
        else MLPPolicy(spec, seed=config.seed)
    optimizer = Adam(policy, config.adam_beta1, config.adam_beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    cfg_hash = config_hash(config.to_dict())

    log_path = None
    ckpt_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "training_log.jsonl")
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
    logger = _JsonlLogger(log_path)
    checkpoint_paths: list[str] = []

    buffer = RolloutBuffer(config.n_envs, config.rollout_horizon, obs_dim, action_dim)
    obs = np.stack([env.reset(config.seed + i) for i, env in enumerate(envs)])
    episode_steps = np.zeros(config.n_envs, dtype=np.int64)

    total_steps = initial_step
    next_eval = (total_steps // config.eval_interval + 1) * config.eval_interval
    best_eval: float | None = None
    n_updates = 0
    t_start = time.perf_counter()

    while total_steps < config.max_steps:
        buffer.reset()
        for _ in range(config.rollout_horizon):
            means, values = policy.forward(obs.astype(np.float32))
            actions, log_probs = sample_action(means, policy.log_std, rng)
            rewards = np.zeros(config.n_envs)
            dones = np.zeros(config.n_envs, dtype=bool)
            new_obs = obs.copy()
            for i, env in enumerate(envs):
                res = env.step(actions[i])
                rewards[i] = res.reward
                dones[i] = res.terminated
                episode_steps[i] += 1
                if res.terminated:
                    logger.write({
                        "kind": "episode",
                        "step": int(total_steps + config.n_envs * (buffer.pos + 1)),
                        "env": i,
                        "termination": res.termination_kind,
                        "lap_time": res.info.get("lap_time"),
                        "episode_steps": int(episode_steps[i]),
                        "episode_reward": float(res.info["episode_reward"]),
                    })
                    episode_steps[i] = 0
                    new_obs[i] = env.reset()
                else:
                    new_obs[i] = res.observation
            buffer.add_column(obs.astype(np.float32), actions, log_probs,
                              values.astype(np.float64), rewards, dones)
            obs = new_obs
        _, boot_values = policy.forward(obs.astype(np.float32))
        buffer.bootstrap = boot_values.astype(np.float64)
        buffer.compute_advantages(config.gamma, config.gae_lambda)

        lr = lr_schedule(total_steps / config.max_steps,
                         config.lr_start, config.lr_end)
        stats = ppo_update(policy, optimizer, buffer, config, lr, rng)
        total_steps += config.n_envs * config.rollout_horizon
        n_updates += 1
        stats.update({"kind": "update", "step": int(total_steps),
                      "update": n_updates,
                      "steps_per_s": total_steps / max(time.perf_counter() - t_start, 1e-9),
                      "mean_reward": float(buffer.rewards.mean())})
        logger.write(stats)
        if on_update is not None:
            on_update(stats)

        if total_steps >= next_eval:
            evals = evaluate(policy, eval_env, config.eval_episodes,
                             deterministic=True, max_steps=config.eval_max_steps,
                             collect_records=telemetry_dir is not None)
            lap_times = [e.lap_time for e in evals if e.lap_time is not None]
            exploited = min(lap_times) if lap_times else None
            if exploited is not None and (best_eval is None or exploited < best_eval):
                best_eval = exploited
            logger.write({
                "kind": "eval", "step": int(total_steps),
                "lap_time": exploited,
                "termination": evals[0].termination,
                "mean_progress": evals[0].mean_progress,
                "episodes": [{"lap_time": e.lap_time, "termination": e.termination,
                              "steps": e.steps} for e in evals],
            })
            if telemetry_dir is not None:
                from .telemetry import TelemetryWriter
                for k, e in enumerate(evals):
                    w = TelemetryWriter(telemetry_dir,
                                        f"eval_{total_steps:010d}_{k}")
                    for rec in e.records:
                        w.record(rec)
                    w.close(lap_time=e.lap_time, termination=e.termination)
            if ckpt_dir is not None:
                path = os.path.join(ckpt_dir, f"ckpt_{total_steps:012d}.bin")
                save_checkpoint(policy, path, step=total_steps, cfg_hash=cfg_hash)
                checkpoint_paths.append(path)
            next_eval = (total_steps // config.eval_interval + 1) * config.eval_interval

    if ckpt_dir is not None:
        path = os.path.join(ckpt_dir, f"ckpt_{total_steps:012d}.bin")
        if not checkpoint_paths or checkpoint_paths[-1] != path:
            save_checkpoint(policy, path, step=total_steps, cfg_hash=cfg_hash)
            checkpoint_paths.append(path)
    logger.close()
    return TrainResult(policy, total_steps, log_path, checkpoint_paths, best_eval)

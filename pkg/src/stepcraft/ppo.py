"""On-policy actor-critic training: rollout collection over the vectorized
environment batch, generalized advantage estimation, clipped-surrogate
policy updates and mean-squared-error value updates."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 3
    minibatches: int = 4
    n_steps: int = 100
    n_envs: int = 64
    iterations: int = 300
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    init_std: float = 0.5
    hidden: tuple = (128, 128)
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")


@dataclass
class RolloutBuffer:
    observations: np.ndarray   # (T, N, obs_dim)
    actions: np.ndarray        # (T, N, act_dim)
    log_probs: np.ndarray      # (T, N)
    rewards: np.ndarray        # (T, N)
    values: np.ndarray         # (T, N)
    dones: np.ndarray          # (T, N) bool
    bootstrap_values: np.ndarray   # (N,) value of the state after the last step

    @property
    def n_samples(self) -> int:
        return self.rewards.size

    def check_finite(self) -> None:
        for name in ("observations", "actions", "log_probs", "rewards", "values"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite entries in buffer.{name}")


def collect_rollout(policy, value_net, venv, n_steps: int, rng, obs: np.ndarray):
    """Run the batch for n_steps; returns (buffer, next_obs).

    Bootstrap values for the state after the final step are recorded for
    every environment (they only enter the advantage recursion where the
    last step was not terminal)."""
    n_envs = obs.shape[0]
    buf = RolloutBuffer(
        observations=np.zeros((n_steps, n_envs, obs.shape[1])),
        actions=np.zeros((n_steps, n_envs, policy.action_dim)),
        log_probs=np.zeros((n_steps, n_envs)),
        rewards=np.zeros((n_steps, n_envs)),
        values=np.zeros((n_steps, n_envs)),
        dones=np.zeros((n_steps, n_envs), dtype=bool),
        bootstrap_values=np.zeros(n_envs),
    )
    for t in range(n_steps):
        actions, log_probs = nn.sample_actions(policy, obs, rng)
        values = nn.forward(value_net, obs)[:, 0]
        buf.observations[t] = obs
        buf.actions[t] = actions
        buf.log_probs[t] = log_probs
        buf.values[t] = values
        obs, rewards, dones, _ = venv.step(actions)
        buf.rewards[t] = rewards
        buf.dones[t] = dones
    buf.bootstrap_values[:] = nn.forward(value_net, obs)[:, 0]
    return buf, obs


def compute_gae(rewards, values, dones, gamma: float, lam: float,
                bootstrap_values=None):
    """Standard exponentially-weighted advantage recursion.

    Shapes (T, N); returns (advantages, returns) with returns equal to
    advantages + values. Terminal steps cut the bootstrap through the done
    mask."""
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    dones = np.asarray(dones, bool)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError(
            f"shape mismatch: rewards {rewards.shape}, values {values.shape}, "
            f"dones {dones.shape}")
    t_max, n = rewards.shape
    if bootstrap_values is None:
        bootstrap_values = np.zeros(n)
    advantages = np.zeros((t_max, n))
    next_value = np.asarray(bootstrap_values, float)
    carry = np.zeros(n)
    for t in range(t_max - 1, -1, -1):
        live = 1.0 - dones[t].astype(float)
        delta = rewards[t] + gamma * next_value * live - values[t]
        carry = delta + gamma * lam * live * carry
        advantages[t] = carry
        next_value = values[t]
    return advantages, advantages + values


def update(policy, value_net, buffer: RolloutBuffer, cfg: TrainConfig,
           policy_opt: nn.Adam, value_opt: nn.Adam, rng) -> dict:
    """One PPO update over a full buffer; returns aggregate statistics."""
    buffer.check_finite()
    advantages, returns = compute_gae(
        buffer.rewards, buffer.values, buffer.dones, cfg.gamma, cfg.gae_lambda,
        buffer.bootstrap_values)

    obs = buffer.observations.reshape(-1, buffer.observations.shape[-1])
    actions = buffer.actions.reshape(-1, buffer.actions.shape[-1])
    logp_old = buffer.log_probs.reshape(-1)
    adv = advantages.reshape(-1)
    ret = returns.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = obs.shape[0]
    mb_size = max(1, n // cfg.minibatches)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "clip_fraction": 0.0,
             "approx_kl": 0.0, "entropy": 0.0}
    batches = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n - mb_size + 1, mb_size):
            idx = order[start:start + mb_size]
            m = len(idx)
            mean = nn.forward(policy.mean_net, obs[idx])
            std = np.exp(policy.log_std)
            z = (actions[idx] - mean) / std
            logp = nn.gaussian_log_prob(actions[idx], mean, policy.log_std)
            ratio = np.exp(logp - logp_old[idx])
            adv_mb = adv[idx]
            unclipped = ratio * adv_mb
            clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv_mb
            policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
            entropy = float(np.sum(policy.log_std) +
                            0.5 * policy.action_dim * math.log(2.0 * math.pi * math.e))
            if not math.isfinite(policy_loss):
                raise RuntimeError(
                    f"non-finite policy loss (ratio range "
                    f"[{ratio.min():.3g}, {ratio.max():.3g}], "
                    f"adv range [{adv_mb.min():.3g}, {adv_mb.max():.3g}])")

            # gradient of the clipped surrogate w.r.t. log-prob
            active = np.where(adv_mb >= 0.0, ratio <= 1.0 + cfg.clip_ratio,
                              ratio >= 1.0 - cfg.clip_ratio)
            d_logp = -(adv_mb * ratio * active) / m
            d_mean = d_logp[:, None] * z / std
            d_log_std = np.sum(d_logp[:, None] * (z ** 2 - 1.0), axis=0)
            d_log_std -= cfg.entropy_coef  # d(-c*H)/d(log_std) = -c per dim
            tape = nn.parameter_gradient(policy.mean_net, obs[idx], d_mean)
            grads = tape.parameter_grads() + [d_log_std]
            nn.clip_grad_norm(grads, cfg.max_grad_norm)
            policy_opt.step(grads)

            v = nn.forward(value_net, obs[idx])[:, 0]
            v_err = v - ret[idx]
            value_loss = float(np.mean(v_err ** 2))
            if not math.isfinite(value_loss):
                raise RuntimeError("non-finite value loss")
            v_tape = nn.parameter_gradient(value_net, obs[idx],
                                           (2.0 * v_err / m)[:, None])
            v_grads = v_tape.parameter_grads()
            nn.clip_grad_norm(v_grads, cfg.max_grad_norm)
            value_opt.step(v_grads)

            stats["policy_loss"] += policy_loss
            stats["value_loss"] += value_loss
            stats["clip_fraction"] += float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio))
            stats["approx_kl"] += float(np.mean(logp_old[idx] - logp))
            stats["entropy"] += entropy
            batches += 1
    for key in stats:
        stats[key] /= max(batches, 1)
    return stats


TRAINING_LOG_COLUMNS = ("iteration", "mean_step_reward", "mean_episode_reward",
                        "mean_episode_length", "policy_loss", "value_loss",
                        "clip_fraction", "approx_kl")


def run_training(venv, obs_dim: int, cfg: TrainConfig, out_dir,
                 log_name: str = "training_log.csv", quiet: bool = False):
    """Full training loop; writes the iteration log and checkpoints.

    Returns (policy, value_net, log_rows)."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    net_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    policy = nn.policy_head(obs_dim, 15, net_rng, hidden=cfg.hidden,
                            init_std=cfg.init_std)
    value_net = nn.value_network(obs_dim, net_rng, hidden=cfg.hidden)
    policy_opt = nn.Adam(policy.mean_net.parameters() + [policy.log_std],
                         lr=cfg.learning_rate)
    value_opt = nn.Adam(value_net.parameters(), lr=cfg.learning_rate)

    log_path = os.path.join(out_dir, log_name)
    rows = []
    obs = venv.reset()
    with open(log_path, "w") as log:
        log.write(",".join(TRAINING_LOG_COLUMNS) + "\n")
        for iteration in range(cfg.iterations):
            buffer, obs = collect_rollout(policy, value_net, venv, cfg.n_steps,
                                          rng, obs)
            stats = update(policy, value_net, buffer, cfg, policy_opt,
                           value_opt, rng)
            episodes = venv.drain_completed()
            mean_step_reward = float(buffer.rewards.mean())
            if episodes:
                mean_ep_reward = float(np.mean([e[0] for e in episodes]))
                mean_ep_length = float(np.mean([e[1] for e in episodes]))
            else:
                mean_ep_reward = math.nan
                mean_ep_length = math.nan
            row = (iteration, mean_step_reward, mean_ep_reward, mean_ep_length,
                   stats["policy_loss"], stats["value_loss"],
                   stats["clip_fraction"], stats["approx_kl"])
            rows.append(row)
            log.write(",".join(repr(v) if isinstance(v, float) else str(v)
                               for v in row) + "\n")
            log.flush()
            if not quiet and (iteration % 10 == 0 or iteration == cfg.iterations - 1):
                print(f"iter {iteration:4d}  step-reward {mean_step_reward:+.4f}  "
                      f"pi-loss {stats['policy_loss']:+.4f}  "
                      f"v-loss {stats['value_loss']:.4f}")
            if (iteration + 1) % cfg.checkpoint_every == 0 \
                    or iteration == cfg.iterations - 1:
                nn.save_checkpoint(os.path.join(out_dir, "policy.bin"),
                                   policy.mean_net, policy.log_std)
                nn.save_checkpoint(os.path.join(out_dir, "value.bin"), value_net)
    return policy, value_net, rows

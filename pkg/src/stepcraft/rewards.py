"""Per-term reward functions for the stepping task.

Sign conventions, fixed here and used consistently by the environment:
the approach rate fed to velocity_toward_target_reward is the negative
time-derivative of target distance (positive while closing in), and the
smoothness term returns a positive magnitude that the environment
subtracts from the total. Slip and collision terms return their (already
negative) contributions directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tg import swing_indicator


@dataclass(frozen=True)
class RewardConfig:
    kappa_ft: float = 1.0      # footstep target
    kappa_vt: float = 0.5      # velocity toward target
    kappa_s: float = 0.1       # action smoothness
    kappa_sl: float = 0.5      # foot slip
    kappa_fs: float = 0.3      # foot stay
    kappa_c: float = 0.5       # collisions
    kappa_vx: float = 1.0      # forward velocity (velocity-reward mode)
    kappa_vy: float = 1.0      # lateral velocity penalty (velocity-reward mode)
    d_hit: float = 0.075       # m, xy radius for hitting a target
    slip_threshold: float = 0.02   # m per step
    force_threshold: float = 5.0   # N, minimum contact force for a hit
    vx_clip: float = 0.5       # m/s, forward-velocity reward ceiling


def _hit_shaping(d: float, d_hit: float) -> float:
    return 1.0 + 0.5 * (1.0 - d / d_hit)


def footstep_target_reward(h, d, cfg: RewardConfig) -> float:
    """Reward for the two active feet; tripled when both hit at once."""
    h = np.asarray(h, dtype=bool)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0):
        raise ValueError("distances must be non-negative")
    if np.any(h & (d > cfg.d_hit)):
        raise ValueError("a hit foot must be within the hit radius")
    multiplier = 2.0 * float(np.all(h)) + 1.0
    per_foot = sum(_hit_shaping(float(d[i]), cfg.d_hit) for i in range(len(h)) if h[i])
    return cfg.kappa_ft * multiplier * per_foot


def velocity_toward_target_reward(approach_rates, kappa_vt: float) -> float:
    """Sum of per-foot approach rates (m/s, positive while closing)."""
    return kappa_vt * float(np.sum(approach_rates))


def smoothness_penalty(a_t, a_tm1, a_tm2, kappa_s: float) -> float:
    """Norm of the second-order action difference; subtracted from the
    total reward by the caller."""
    a_t, a_tm1, a_tm2 = (np.asarray(a) for a in (a_t, a_tm1, a_tm2))
    return kappa_s * float(np.linalg.norm(a_t - 2.0 * a_tm1 + a_tm2))


def foot_slip_penalty(pos_t, pos_tm1, contact_t, contact_tm1, kappa_sl: float,
                      threshold: float = 0.02) -> float:
    """-kappa_sl per foot that stayed in contact while translating more
    than the threshold in the xy plane."""
    pos_t = np.asarray(pos_t, float)
    pos_tm1 = np.asarray(pos_tm1, float)
    moved = np.linalg.norm(pos_t - pos_tm1, axis=1) > threshold
    slipping = moved & np.asarray(contact_t, bool) & np.asarray(contact_tm1, bool)
    return -kappa_sl * float(np.count_nonzero(slipping))


def foot_stay_reward(h, d, active_feet, cfg: RewardConfig) -> float:
    """Reward inactive feet for staying on their previous targets."""
    h = np.asarray(h, dtype=bool)
    d = np.asarray(d, dtype=float)
    total = 0.0
    for foot in range(4):
        if foot in active_feet or not h[foot]:
            continue
        total += _hit_shaping(float(d[foot]), cfg.d_hit)
    return cfg.kappa_fs * total


def collision_penalty(g: int, kappa_c: float) -> float:
    return -kappa_c * g


def swing_phase_reward(phase: float, frequency: float) -> float:
    """Frequency-weighted bonus while the generator is mid-swing; keeps
    the gait from collapsing into standing still."""
    return float(swing_indicator(phase)) * frequency


def e2e_reward_terms(velocity_xy, kappa_vx: float, kappa_vy: float,
                     vx_clip: float = 0.5) -> float:
    """Clipped forward-velocity reward minus lateral-velocity penalty,
    used by the end-to-end baseline."""
    v = np.asarray(velocity_xy, float)
    return kappa_vx * min(float(v[0]), vx_clip) - kappa_vy * abs(float(v[1]))

"""Kinematic quadruped stepping environment.

Rigid-body physics is replaced by a deterministic stepper: feet track the
commanded positions (trajectory-generator nominal plus policy residuals)
under a first-order rate limit, support feet snap to the terrain (or sink
into holes), and the floating base is recomputed geometrically from the
stance feet. Observations, rewards, footstep hits and collision counting
keep their full interfaces on top of this abstraction. The base never
yaws; target headings are expressed in world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tg as tg_mod
from .rewards import (RewardConfig, collision_penalty, e2e_reward_terms,
                      foot_slip_penalty, foot_stay_reward,
                      footstep_target_reward, smoothness_penalty,
                      swing_phase_reward, velocity_toward_target_reward)
from .terrain import (STANCE_OFFSETS, FootTarget, Terrain, TargetSequence,
                      scan_around_feet)
from .tg import TgAction, TgConfig, TgState, foot_in_swing

ACTION_DIM = 15


class SetupError(RuntimeError):
    """Episode could not be initialized (e.g. spawn over a hole)."""


def observation_layout(scan_points_per_foot: int = 9) -> dict:
    """Named slices of the observation vector, plus its total length.

    Order is fixed: foot positions, foot velocities, joint torques, IMU,
    contacts, target offsets, active feet, phase encoding, previous two
    actions, foot scan.
    """
    sizes = [
        ("foot_positions", 12),
        ("foot_velocities", 12),
        ("joint_torques", 12),
        ("imu", 4),
        ("contacts", 4),
        ("target_offsets", 8),
        ("active_feet", 4),
        ("phase", 2),
        ("action_prev", ACTION_DIM),
        ("action_prev2", ACTION_DIM),
        ("foot_scan", 4 * scan_points_per_foot),
    ]
    layout, offset = {}, 0
    for name, n in sizes:
        layout[name] = slice(offset, offset + n)
        offset += n
    layout["total"] = offset
    return layout


DEFAULT_LAYOUT = observation_layout()
OBS_DIM = DEFAULT_LAYOUT["total"]


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.02
    horizon: int = 1000
    mass: float = 12.0               # kg, sets the contact-force proxy
    gravity: float = 9.81
    foot_speed_max: float = 1.0      # m/s command-tracking rate limit
    contact_tol: float = 1e-4        # m, foot-on-ground tolerance
    # raw policy action -> physical units
    scale_frequency: float = 0.1     # Hz per unit
    scale_step_length: float = 0.01  # m per unit
    scale_standing_height: float = 0.01
    scale_residual: float = 0.1      # m per unit (then clipped to +-0.1)
    # collision model
    base_clearance: float = 0.05     # m, required gap under the base corners
    body_drop: float = 0.05          # m, base underside below base center
    hole_rim: float = 0.0            # m, nominal ground plane for holes
    hole_collision_depth: float = 0.05
    hole_descend_rate: float = 0.5   # m/s sink rate for support feet on holes
    fall_feet: int = 2               # feet below the rim that end the episode
    # foot terrain scan
    scan_size: int = 3
    scan_spacing: float = 0.05
    # trajectory generator
    tg: TgConfig = TgConfig()
    tg_init: TgState = TgState()
    reward: RewardConfig = RewardConfig()
    reward_mode: str = "footsteps"   # "footsteps" or "velocity"

    @property
    def obs_dim(self) -> int:
        return observation_layout(self.scan_size ** 2)["total"]


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    reward_terms: dict
    hits: np.ndarray       # (4,) bool
    collisions: int
    done: bool
    info: dict


class QuadrupedEnv:
    """Single stepping environment over one terrain instance."""

    def __init__(self, terrain: Terrain, cfg: EnvConfig = EnvConfig()):
        self.terrain = terrain
        self.cfg = cfg
        self.layout = observation_layout(cfg.scan_size ** 2)
        self.obs_dim = self.layout["total"]
        self._trace = None
        self._initialized = False

    # -- episode management -------------------------------------------------

    def reset(self, sequence: TargetSequence | None, seed=None,
              terrain: Terrain | None = None, start_xy=(0.0, 0.0)) -> np.ndarray:
        """Place the robot at nominal stance over the spawn region.

        `sequence` may be None in velocity-reward mode (no footstep
        targets). A fresh terrain may be supplied per episode.
        """
        if terrain is not None:
            self.terrain = terrain
        cfg = self.cfg
        self.rng = np.random.default_rng(seed)
        self.sequence = sequence
        self.start_xy = np.asarray(start_xy, float)

        self.foot_world = np.zeros((4, 3))
        for foot in range(4):
            xy = self.start_xy + STANCE_OFFSETS[foot]
            h = self.terrain.height_at(xy[0], xy[1])
            if h is None:
                raise SetupError(f"spawn foot {foot} at {xy} is over a hole")
            self.foot_world[foot, :2] = xy
            self.foot_world[foot, 2] = h

        self.tg_state = cfg.tg_init
        self.base_xy = self.start_xy.copy()
        self.base_z = float(np.mean(self.foot_world[:, 2])) + self.tg_state.standing_height
        self.yaw = 0.0
        self.roll = 0.0
        self.pitch = 0.0
        self.roll_rate = 0.0
        self.pitch_rate = 0.0

        self.contacts = np.array([self._support(foot) for foot in range(4)])
        self.prev_contacts = self.contacts.copy()
        self.prev_foot_xy = self.foot_world[:, :2].copy()
        self.prev_hip_pos = self._hip_frame_positions()
        self.foot_vel = np.zeros((4, 3))

        self.action_prev = np.zeros(ACTION_DIM)
        self.action_prev2 = np.zeros(ACTION_DIM)
        self.last_targets = [self.foot_world[f, :2].copy() for f in range(4)]
        self.step_count = 0
        self.done = False
        self.total_collisions = 0
        self.total_hits = 0
        self.pair_advances = 0
        self._dist_prev = self._target_distances()
        self._initialized = True
        if self._trace is not None:
            self._trace = []
        return self._observation()

    def install_pair_targets(self, index: int, world_xy_by_foot: dict) -> None:
        """Create or replace the target pair at `index` (used by the
        goal selector); z comes from the terrain under each target."""
        targets = []
        for foot, xy in sorted(world_xy_by_foot.items()):
            xy = np.asarray(xy, float)
            z = self.terrain.height_at(xy[0], xy[1])
            targets.append(FootTarget(foot, xy, 0.0 if z is None else z))
        self.sequence.set_pair(index, targets)
        self._dist_prev = self._target_distances()

    # -- stepping -----------------------------------------------------------

    def step(self, action) -> StepOutcome:
        if not self._initialized:
            raise SetupError("reset() must be called before step()")
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        action = np.asarray(action, float)
        if action.shape != (ACTION_DIM,):
            raise ValueError(f"action shape {action.shape}, expected ({ACTION_DIM},)")
        if not np.all(np.isfinite(action)):
            raise FloatingPointError("non-finite action")
        cfg = self.cfg
        dt = cfg.dt

        tga = TgAction(
            delta_frequency=float(action[0]) * cfg.scale_frequency,
            delta_step_length=float(action[1]) * cfg.scale_step_length,
            delta_standing_height=float(action[2]) * cfg.scale_standing_height,
            residuals=action[3:] * cfg.scale_residual,
        )
        self.tg_state = tg_mod.advance(self.tg_state, tga, dt, cfg.tg)
        nominal = tg_mod.nominal_foot_positions(self.tg_state, cfg.tg)

        prev_foot_xy = self.foot_world[:, :2].copy()
        prev_hip = self._hip_frame_positions()
        prev_base_xy = self.base_xy.copy()

        # track commanded positions under the rate limit
        for foot in range(4):
            cmd = np.empty(3)
            cmd[:2] = self.base_xy + STANCE_OFFSETS[foot] + nominal[3 * foot:3 * foot + 2] \
                + tga.residuals[3 * foot:3 * foot + 2]
            cmd[2] = self.base_z + nominal[3 * foot + 2] + tga.residuals[3 * foot + 2]
            delta = cmd - self.foot_world[foot]
            dist = float(np.linalg.norm(delta))
            limit = cfg.foot_speed_max * dt
            if dist > limit:
                delta *= limit / dist
            self.foot_world[foot] += delta

        # terrain contact: snap support feet, clamp swing feet, sink on holes
        new_contacts = np.zeros(4, dtype=bool)
        hole_feet_below = np.zeros(4, dtype=bool)
        for foot in range(4):
            x, y, z = self.foot_world[foot]
            h = self.terrain.height_at(x, y)
            support = self._support(foot)
            if h is None:
                if support:
                    self.foot_world[foot, 2] = z - cfg.hole_descend_rate * dt
                hole_feet_below[foot] = (
                    self.foot_world[foot, 2] < cfg.hole_rim - cfg.hole_collision_depth
                )
            else:
                if support:
                    self.foot_world[foot, 2] = h
                else:
                    self.foot_world[foot, 2] = max(z, h)
                new_contacts[foot] = support and self.foot_world[foot, 2] <= h + cfg.contact_tol
        n_contacts = int(np.count_nonzero(new_contacts))
        forces = np.where(new_contacts, cfg.mass * cfg.gravity / max(n_contacts, 1), 0.0)

        # geometric base update from the stance feet
        prev_roll, prev_pitch = self.roll, self.pitch
        if n_contacts >= 1:
            idx = np.flatnonzero(new_contacts)
            self.base_xy = np.mean(self.foot_world[idx, :2] - STANCE_OFFSETS[idx], axis=0)
            self.base_z = float(np.mean(self.foot_world[idx, 2])) + self.tg_state.standing_height
            if n_contacts >= 3:
                pts = self.foot_world[idx]
                a = np.column_stack([np.ones(len(idx)), pts[:, 0], pts[:, 1]])
                coef, *_ = np.linalg.lstsq(a, pts[:, 2], rcond=None)
                self.pitch = math.atan2(-coef[1], 1.0)
                self.roll = math.atan2(coef[2], 1.0)
        self.roll_rate = (self.roll - prev_roll) / dt
        self.pitch_rate = (self.pitch - prev_pitch) / dt

        collisions = count_collisions(self.terrain, self.base_xy, self.base_z,
                                      hole_feet_below, new_contacts, cfg)
        self.total_collisions += collisions

        # footstep hits against the active pair
        dists = self._target_distances()
        hits = np.zeros(4, dtype=bool)
        active_feet = ()
        if self.sequence is not None and not self.sequence.exhausted():
            active_feet = self.sequence.active_feet()
            for foot in range(4):
                if dists[foot] is None:
                    continue
                hits[foot] = (
                    new_contacts[foot]
                    and forces[foot] >= cfg.reward.force_threshold
                    and dists[foot] <= cfg.reward.d_hit
                )

        # reward terms, in a fixed order; the total is their exact sum
        terms = {}
        if cfg.reward_mode == "footsteps":
            ft_feet = sorted(active_feet)
            if ft_feet:
                terms["footstep_target"] = footstep_target_reward(
                    [hits[f] for f in ft_feet], [dists[f] for f in ft_feet], cfg.reward)
                approach = []
                for foot in ft_feet:
                    prev_d = self._dist_prev[foot]
                    approach.append(0.0 if prev_d is None
                                    else -(dists[foot] - prev_d) / dt)
                terms["velocity_toward_target"] = velocity_toward_target_reward(
                    approach, cfg.reward.kappa_vt)
            else:
                terms["footstep_target"] = 0.0
                terms["velocity_toward_target"] = 0.0
        else:
            velocity = (self.base_xy - prev_base_xy) / dt
            terms["forward_velocity"] = e2e_reward_terms(
                velocity, cfg.reward.kappa_vx, cfg.reward.kappa_vy, cfg.reward.vx_clip)
        terms["smoothness"] = -smoothness_penalty(
            action, self.action_prev, self.action_prev2, cfg.reward.kappa_s)
        terms["foot_slip"] = foot_slip_penalty(
            self.foot_world[:, :2], prev_foot_xy, new_contacts, self.prev_contacts,
            cfg.reward.kappa_sl, cfg.reward.slip_threshold)
        stay_d = np.array([d if d is not None else 0.0 for d in dists])
        terms["foot_stay"] = foot_stay_reward(hits, stay_d, active_feet, cfg.reward)
        terms["collision"] = collision_penalty(collisions, cfg.reward.kappa_c)
        terms["swing_phase"] = swing_phase_reward(self.tg_state.phase,
                                                  self.tg_state.frequency)
        reward = sum(terms.values())

        # advance the pair when both active targets are hit simultaneously
        pair_advanced = False
        if active_feet and all(hits[f] for f in active_feet):
            for target in self.sequence.active_pair():
                target.hit = True
                self.last_targets[target.foot] = target.xy.copy()
            self.sequence.advance()
            self.pair_advances += 1
            pair_advanced = True
        if active_feet:
            self.total_hits += sum(int(hits[f]) for f in active_feet)

        # bookkeeping for the next step
        self.foot_vel = (self._hip_frame_positions() - prev_hip) / dt
        self.prev_hip_pos = self._hip_frame_positions()
        self.prev_contacts = new_contacts
        self.contacts = new_contacts
        self.action_prev2 = self.action_prev
        self.action_prev = action.copy()
        self._dist_prev = self._target_distances()
        self.step_count += 1

        fell = int(np.count_nonzero(hole_feet_below)) >= cfg.fall_feet
        exhausted = self.sequence is not None and self.sequence.exhausted() \
            and cfg.reward_mode == "footsteps"
        self.done = fell or exhausted or self.step_count >= cfg.horizon

        obs = self._observation()
        info = {
            "displacement": self.base_xy - self.start_xy,
            "pair_advanced": pair_advanced,
            "fell": fell,
            "exhausted": exhausted,
        }
        outcome = StepOutcome(obs, reward, terms, hits, collisions, self.done, info)
        if self._trace is not None:
            self._record_trace(outcome)
        return outcome

    # -- internals ----------------------------------------------------------

    def _support(self, foot: int) -> bool:
        return not foot_in_swing(self.tg_state.phase, foot)

    def _hip_frame_positions(self) -> np.ndarray:
        out = np.empty((4, 3))
        out[:, :2] = self.foot_world[:, :2] - (self.base_xy + STANCE_OFFSETS)
        out[:, 2] = self.foot_world[:, 2] - self.base_z
        return out

    def _target_distances(self):
        """Per-foot xy distance to the relevant target: the next target for
        active feet, the previous one otherwise. None without targets."""
        if self.sequence is None:
            return [None] * 4
        dists = [None] * 4
        active = {} if self.sequence.exhausted() else \
            {t.foot: t for t in self.sequence.active_pair()}
        for foot in range(4):
            ref = active[foot].xy if foot in active else self.last_targets[foot]
            dists[foot] = float(np.linalg.norm(self.foot_world[foot, :2] - ref))
        return dists

    def _target_offsets(self) -> np.ndarray:
        """Observation p: xy offset from each foot to its target, rotated
        into the (yaw-less) base frame."""
        p = np.zeros(8)
        if self.sequence is None:
            return p
        active = {} if self.sequence.exhausted() else \
            {t.foot: t for t in self.sequence.active_pair()}
        for foot in range(4):
            ref = active[foot].xy if foot in active else self.last_targets[foot]
            p[2 * foot:2 * foot + 2] = ref - self.foot_world[foot, :2]
        return p

    def _observation(self) -> np.ndarray:
        lay = self.layout
        obs = np.zeros(self.obs_dim)
        obs[lay["foot_positions"]] = self._hip_frame_positions().ravel()
        obs[lay["foot_velocities"]] = self.foot_vel.ravel()
        # joint torques stay zero: the stepper has no joint model
        obs[lay["imu"]] = [self.roll, self.pitch, self.roll_rate, self.pitch_rate]
        obs[lay["contacts"]] = self.contacts.astype(float)
        obs[lay["target_offsets"]] = self._target_offsets()
        active = np.zeros(4)
        if self.sequence is not None and not self.sequence.exhausted():
            active[list(self.sequence.active_feet())] = 1.0
        obs[lay["active_feet"]] = active
        obs[lay["phase"]] = [math.cos(self.tg_state.phase), math.sin(self.tg_state.phase)]
        obs[lay["action_prev"]] = self.action_prev
        obs[lay["action_prev2"]] = self.action_prev2
        obs[lay["foot_scan"]] = scan_around_feet(
            self.terrain, self.foot_world[:, :2], self.cfg.scan_size,
            self.cfg.scan_spacing).ravel()
        return obs

    # -- episode trace ------------------------------------------------------

    TRACE_TERMS = ("footstep_target", "velocity_toward_target", "forward_velocity",
                   "smoothness", "foot_slip", "foot_stay", "collision", "swing_phase")

    def enable_trace(self) -> None:
        self._trace = []

    def _record_trace(self, outcome: StepOutcome) -> None:
        row = [self.step_count, *self.base_xy, self.base_z, self.yaw]
        row.extend(self.foot_world.ravel())
        for name in self.TRACE_TERMS:
            row.append(outcome.reward_terms.get(name, 0.0))
        row.append(outcome.reward)
        row.extend(int(h) for h in outcome.hits)
        row.append(outcome.collisions)
        row.append(int(outcome.done))
        self._trace.append(row)

    def export_trace(self, path) -> None:
        if self._trace is None:
            raise RuntimeError("tracing was not enabled")
        header = ["t", "base_x", "base_y", "base_z", "yaw"]
        header += [f"foot{f}_{ax}" for f in range(4) for ax in "xyz"]
        header += [f"reward_{name}" for name in self.TRACE_TERMS]
        header += ["reward_total", "hit_fl", "hit_fr", "hit_rl", "hit_rr",
                   "collisions", "done"]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in self._trace:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")


def count_collisions(terrain: Terrain, base_xy, base_z: float, hole_feet_below,
                     contacts, cfg: EnvConfig) -> int:
    """Collision count for one step: base corners intruding into terrain
    plus feet sunk below a hole rim while their diagonal partner stands."""
    g = 0
    underside = base_z - cfg.body_drop
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        corner = (base_xy[0] + sx * STANCE_OFFSETS[0, 0],
                  base_xy[1] + sy * STANCE_OFFSETS[0, 1])
        h = terrain.height_at(*corner)
        if h is not None and underside < h + cfg.base_clearance:
            g += 1
    partner = {0: 3, 3: 0, 1: 2, 2: 1}
    for foot in range(4):
        if hole_feet_below[foot] and contacts[partner[foot]]:
            g += 1
    return g


# ---------------------------------------------------------------------------
# Vectorized batch


class VectorEnv:
    """Fixed-size batch of environments stepped in index order.

    Auto-resets finished episodes through `episode_factory(env_index,
    episode_number) -> (terrain, sequence, seed)`, keeping per-env episode
    statistics for the training log.
    """

    def __init__(self, envs, episode_factory):
        self.envs = list(envs)
        self.episode_factory = episode_factory
        self.n = len(self.envs)
        self._episode_counts = [0] * self.n
        self._ep_reward = np.zeros(self.n)
        self._ep_length = np.zeros(self.n, dtype=int)
        self._ep_hits = np.zeros(self.n, dtype=int)
        self.completed = []   # (total_reward, length, hits) per finished episode

    def reset(self) -> np.ndarray:
        obs = np.zeros((self.n, self.envs[0].obs_dim))
        for i, env in enumerate(self.envs):
            terrain, sequence, seed = self.episode_factory(i, self._episode_counts[i])
            obs[i] = env.reset(sequence, seed=seed, terrain=terrain)
        self._ep_reward[:] = 0.0
        self._ep_length[:] = 0
        self._ep_hits[:] = 0
        return obs

    def step(self, actions: np.ndarray):
        obs = np.zeros((self.n, self.envs[0].obs_dim))
        rewards = np.zeros(self.n)
        dones = np.zeros(self.n, dtype=bool)
        infos = []
        for i, env in enumerate(self.envs):
            try:
                out = env.step(actions[i])
            except Exception as exc:
                raise RuntimeError(f"environment {i} failed: {exc}") from exc
            rewards[i] = out.reward
            dones[i] = out.done
            infos.append(out.info)
            self._ep_reward[i] += out.reward
            self._ep_length[i] += 1
            self._ep_hits[i] += int(np.count_nonzero(out.hits))
            if out.done:
                self.completed.append(
                    (self._ep_reward[i], int(self._ep_length[i]), int(self._ep_hits[i])))
                self._ep_reward[i] = 0.0
                self._ep_length[i] = 0
                self._ep_hits[i] = 0
                self._episode_counts[i] += 1
                terrain, sequence, seed = self.episode_factory(i, self._episode_counts[i])
                obs[i] = env.reset(sequence, seed=seed, terrain=terrain)
            else:
                obs[i] = out.observation
        return obs, rewards, dones, infos

    def drain_completed(self):
        done, self.completed = self.completed, []
        return done

"""Footstep goal selection by optimizing the learned value surface.

Targets are chosen without any additional training: a lattice search over
the 8-D target-offset segment of the observation, scored by the critic
plus a weighted directional term, initializes a short fixed-step gradient
ascent using the network's input gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .env import DEFAULT_LAYOUT
from .gridsearch import (PrunedLatticeSearch, dense_lattice_argmax,
                         heading_weights)
from .tg import PAIR_FIRST

P_SLICE = DEFAULT_LAYOUT["target_offsets"]
ACTIVE_SLICE = DEFAULT_LAYOUT["active_feet"]

DENSE_POINT_LIMIT = 50_000   # below this, a dense float64 sweep is cheap


@dataclass(frozen=True)
class HlpConfig:
    half_width: float = 0.15       # lattice half-width per axis, m
    points_per_axis: int = 5
    learning_rate: float = 1e-4    # ascent step
    iterations: int = 5            # ascent iterations
    kappa_hd: float = 50.0         # directional weight
    alpha: float = 0.0             # desired heading, rad
    return_final_iterate: bool = False   # return the last ascent point
                                         # instead of the best one seen
    grid_mode: str = "auto"        # auto | pruned | dense

    def __post_init__(self):
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")
        if self.half_width <= 0.0:
            raise ValueError("half_width must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class GoalProposal:
    p: np.ndarray          # (8,) per-foot xy offsets, base frame
    score: float
    value: float
    directional: float


@dataclass
class HlpQuery:
    """Observation snapshot whose target-offset segment is the free
    variable, plus the yaw needed to express the heading in world frame."""

    observation: np.ndarray
    yaw: float
    p_slice: slice = P_SLICE
    active_feet: tuple = None

    def __post_init__(self):
        self.observation = np.asarray(self.observation, float)
        if self.active_feet is None:
            flags = self.observation[ACTIVE_SLICE] \
                if self.observation.shape[0] >= ACTIVE_SLICE.stop else np.zeros(4)
            feet = tuple(int(i) for i in np.flatnonzero(flags > 0.5))
            self.active_feet = feet if len(feet) == 2 else PAIR_FIRST


def directional_term(p, yaw: float, alpha: float, active_feet=PAIR_FIRST) -> float:
    """Projection of the active pair's summed offsets onto the desired
    heading, after rotating offsets from base frame to world frame."""
    p = np.asarray(p, float)
    heading = np.array([math.cos(alpha), math.sin(alpha)])
    rz = np.array([[math.cos(yaw), -math.sin(yaw)],
                   [math.sin(yaw), math.cos(yaw)]])
    total = np.zeros(2)
    for foot in active_feet:
        total = total + p[2 * foot:2 * foot + 2]
    return float(heading @ rz @ total)


def objective(query: HlpQuery, p, value_net: nn.MlpNetwork,
              cfg: HlpConfig) -> GoalProposal:
    """Score one candidate offset vector; components reported separately."""
    p = np.asarray(p, float)
    if p.shape != (query.p_slice.stop - query.p_slice.start,):
        raise nn.ShapeError(
            f"p has shape {p.shape}, segment expects "
            f"({query.p_slice.stop - query.p_slice.start},)")
    obs = query.observation.copy()
    obs[query.p_slice] = p
    value = float(nn.forward_one(value_net, obs)[0])
    h = directional_term(p, query.yaw, cfg.alpha, query.active_feet)
    return GoalProposal(p.copy(), value + cfg.kappa_hd * h, value, h)


# one engine per (network, lattice) pair; keyed by object identity with the
# network kept alive so ids cannot be recycled
_ENGINE_CACHE: dict = {}


def _engine_for(net: nn.MlpNetwork, cfg: HlpConfig, p_slice: slice):
    key = (id(net), cfg.half_width, cfg.points_per_axis, p_slice.start, p_slice.stop)
    hit = _ENGINE_CACHE.get(key)
    if hit is not None and hit[0] is net:
        return hit[1]
    engine = PrunedLatticeSearch(net, cfg.half_width, cfg.points_per_axis, p_slice)
    if len(_ENGINE_CACHE) >= 4:
        _ENGINE_CACHE.pop(next(iter(_ENGINE_CACHE)))
    _ENGINE_CACHE[key] = (net, engine)
    return engine


def grid_search(query: HlpQuery, value_net: nn.MlpNetwork,
                cfg: HlpConfig) -> GoalProposal:
    """Exact argmax of the objective over the offset lattice.

    Ties resolve to the lowest lattice index (axis 0 varying slowest)."""
    n_points = cfg.points_per_axis ** 8
    use_dense = cfg.grid_mode == "dense" or (
        cfg.grid_mode == "auto"
        and (n_points <= DENSE_POINT_LIMIT or len(value_net.weights) < 2))
    if use_dense:
        p, _ = dense_lattice_argmax(
            query.observation, query.yaw, query.active_feet, value_net,
            cfg.half_width, cfg.points_per_axis, query.p_slice,
            cfg.kappa_hd, cfg.alpha)
    else:
        engine = _engine_for(value_net, cfg, query.p_slice)
        p, _ = engine.search(query.observation, query.yaw, query.active_feet,
                             cfg.kappa_hd, cfg.alpha)
    return objective(query, p, value_net, cfg)


def gradient_ascent(start: GoalProposal, query: HlpQuery,
                    value_net: nn.MlpNetwork, cfg: HlpConfig) -> GoalProposal:
    """Fixed-step ascent on the objective from a starting proposal.

    The step size is not adaptive, so a step can overshoot; unless
    return_final_iterate is set, the best iterate seen (including the
    start) is returned."""
    obs = query.observation.copy()
    weighting = np.ones(value_net.output_dim)
    h_grad = cfg.kappa_hd * heading_weights(query.yaw, cfg.alpha, query.active_feet)
    p = start.p.copy()
    best = start
    last = start
    for _ in range(cfg.iterations):
        obs[query.p_slice] = p
        grad = nn.input_gradient(value_net, obs, weighting)[query.p_slice] + h_grad
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite objective gradient")
        p = p + cfg.learning_rate * grad
        last = objective(query, p, value_net, cfg)
        if last.score > best.score:
            best = last
    return last if cfg.return_final_iterate else best


def select_targets(query: HlpQuery, value_net: nn.MlpNetwork,
                   cfg: HlpConfig = HlpConfig()) -> GoalProposal:
    """Full goal-selection pipeline: lattice search, then gradient ascent."""
    return gradient_ascent(grid_search(query, value_net, cfg), query,
                           value_net, cfg)


def proposal_to_world_targets(proposal: GoalProposal, foot_xy, yaw: float,
                              feet) -> dict:
    """World-frame xy targets for the given feet from base-frame offsets."""
    foot_xy = np.asarray(foot_xy, float)
    rz = np.array([[math.cos(yaw), -math.sin(yaw)],
                   [math.sin(yaw), math.cos(yaw)]])
    return {foot: foot_xy[foot] + rz @ proposal.p[2 * foot:2 * foot + 2]
            for foot in feet}

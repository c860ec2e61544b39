"""Phase-driven trot trajectory generator.

Foot order everywhere: 0 front-left, 1 front-right, 2 rear-left,
3 rear-right. The two diagonal pairs alternate: the first pair is
(front-left, rear-right), the second (front-right, rear-left).

One gait cycle spans a phase of 2*pi. The first pair swings while the
phase is in [pi/4, 3*pi/4], the second pair while it is in
[5*pi/4, 7*pi/4]; every foot supports for the remaining three quarters
of its cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi

FOOT_NAMES = ("FL", "FR", "RL", "RR")
PAIR_FIRST = (0, 3)
PAIR_SECOND = (1, 2)

SWING_START = 0.25 * math.pi
SWING_END = 0.75 * math.pi

# phase offset of each foot relative to the global cycle
FOOT_PHASE_OFFSET = (0.0, math.pi, math.pi, 0.0)


@dataclass(frozen=True)
class TgConfig:
    freq_max: float = 3.0            # Hz
    step_length_max: float = 0.25    # m
    standing_height_min: float = 0.25
    standing_height_max: float = 0.45
    lift_height: float = 0.09        # m, swing apex above the support plane
    residual_limit: float = 0.1      # m, per-axis clip on residuals


@dataclass(frozen=True)
class TgState:
    phase: float = 0.0               # rad, in [0, 2*pi)
    frequency: float = 2.0           # Hz
    step_length: float = 0.0         # m
    standing_height: float = 0.35    # m


@dataclass(frozen=True)
class TgAction:
    """Physical-unit modulation deltas plus per-foot position residuals."""

    delta_frequency: float = 0.0
    delta_step_length: float = 0.0
    delta_standing_height: float = 0.0
    residuals: np.ndarray = None     # (12,) xyz per foot, clipped on creation

    def __post_init__(self):
        res = np.zeros(12) if self.residuals is None else np.asarray(self.residuals, float)
        if res.shape != (12,):
            raise ValueError(f"residuals shape {res.shape}, expected (12,)")
        object.__setattr__(self, "residuals", np.clip(res, -0.1, 0.1))


def advance(state: TgState, action: TgAction, dt: float, cfg: TgConfig = TgConfig()) -> TgState:
    """Apply modulation deltas, then advance the phase by 2*pi*f*dt."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    freq = float(np.clip(state.frequency + action.delta_frequency, 0.0, cfg.freq_max))
    step_length = float(np.clip(state.step_length + action.delta_step_length,
                                0.0, cfg.step_length_max))
    height = float(np.clip(state.standing_height + action.delta_standing_height,
                           cfg.standing_height_min, cfg.standing_height_max))
    phase = (state.phase + TWO_PI * freq * dt) % TWO_PI
    return TgState(phase, freq, step_length, height)


def swing_indicator(phase: float) -> int:
    """1 iff some pair is mid-swing at this global phase (closed intervals)."""
    if not 0.0 <= phase < TWO_PI:
        raise ValueError(f"phase {phase} outside [0, 2*pi)")
    in_first = SWING_START <= phase <= SWING_END
    in_second = SWING_START + math.pi <= phase <= SWING_END + math.pi
    return 1 if (in_first or in_second) else 0


def foot_in_swing(phase: float, foot: int) -> bool:
    """Whether this foot is in its swing window at the given global phase."""
    own = (phase - FOOT_PHASE_OFFSET[foot]) % TWO_PI
    return SWING_START <= own <= SWING_END


def active_pair(phase: float):
    """Pair whose half-cycle contains the phase: first pair on [0, pi)."""
    if not 0.0 <= phase < TWO_PI:
        raise ValueError(f"phase {phase} outside [0, 2*pi)")
    return PAIR_FIRST if phase < math.pi else PAIR_SECOND


def pair_for_index(index: int):
    """Target-pair parity convention: even indices belong to the first pair."""
    return PAIR_FIRST if index % 2 == 0 else PAIR_SECOND


def _smoothstep(t: float) -> float:
    return t * t * (3.0 - 2.0 * t)


def _lift_profile(s: float) -> float:
    # piecewise-cubic bump: 0 at touchdown/liftoff, 1 at s = 0.5
    if s < 0.5:
        return _smoothstep(2.0 * s)
    return _smoothstep(2.0 * (1.0 - s))


def nominal_foot_positions(state: TgState, cfg: TgConfig = TgConfig()) -> np.ndarray:
    """Hip-frame xyz for all four feet, (12,).

    Swing feet travel from -L/2 to +L/2 along x with a lift arc; support
    feet slide back linearly in phase at depth -standing_height.
    """
    out = np.empty(12)
    half = 0.5 * state.step_length
    for foot in range(4):
        own = (state.phase - FOOT_PHASE_OFFSET[foot]) % TWO_PI
        if SWING_START <= own <= SWING_END:
            s = (own - SWING_START) / (SWING_END - SWING_START)
            x = -half + state.step_length * _smoothstep(s)
            z = -state.standing_height + cfg.lift_height * _lift_profile(s)
        else:
            u = ((own - SWING_END) % TWO_PI) / (TWO_PI - (SWING_END - SWING_START))
            x = half - state.step_length * u
            z = -state.standing_height
        out[3 * foot] = x
        out[3 * foot + 1] = 0.0
        out[3 * foot + 2] = z
    return out

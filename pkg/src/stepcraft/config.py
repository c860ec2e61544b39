"""Key-value configuration files and dataclass builders.

One INI-style file configures everything: sections hold `key = value`
lines, values are parsed as Python literals (numbers, tuples, booleans)
with bare strings passing through. Unknown keys are rejected so typos
fail loudly. The STEPCRAFT_SEED environment variable overrides any
configured seed.

Sections and their targets:
  [env]      -> EnvConfig (plus reward_mode)
  [reward]   -> RewardConfig
  [tg]       -> TgConfig and the initial generator state (init_frequency,
                init_step_length, init_standing_height)
  [terrain]  -> generate_terrain arguments (infill, height_variation,
                extent, cell_size, spawn_radius)
  [targets]  -> generate_target_sequence arguments (n_pairs,
                step_length_min/max, jitter)
  [train]    -> TrainConfig
  [hlp]      -> HlpConfig
  [eval]     -> ExperimentSpec fields (see harness)
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import os

from .env import EnvConfig
from .hlp import HlpConfig
from .ppo import TrainConfig
from .rewards import RewardConfig
from .tg import TgConfig, TgState

SEED_ENV_VAR = "STEPCRAFT_SEED"

TERRAIN_DEFAULTS = {
    "infill": 0.9,
    "height_variation": 0.05,
    "extent": 10.0,
    "cell_size": 0.25,
    "spawn_radius": 0.6,
}

TARGET_DEFAULTS = {
    "n_pairs": 30,
    "step_length_min": 0.0,
    "step_length_max": 0.2,
    "jitter": 0.1,
}

TG_STATE_DEFAULTS = {
    "init_frequency": 2.0,
    "init_step_length": 0.0,
    "init_standing_height": 0.35,
}


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return {section: {key: _parse_value(value)
                      for key, value in parser.items(section)}
            for section in parser.sections()}


def _build(cls, section: dict, label: str, **fixed):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise KeyError(f"[{label}] has unknown keys: {sorted(unknown)}")
    return cls(**{**section, **fixed})


def _take(defaults: dict, section: dict, label: str) -> dict:
    unknown = set(section) - set(defaults)
    if unknown:
        raise KeyError(f"[{label}] has unknown keys: {sorted(unknown)}")
    return {**defaults, **section}


def resolve_seed(seed: int) -> int:
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else int(seed)


@dataclasses.dataclass
class Settings:
    env: EnvConfig
    train: TrainConfig
    hlp: HlpConfig
    terrain: dict
    targets: dict
    raw: dict

    def terrain_args(self) -> dict:
        return dict(self.terrain)

    def sequence_args(self) -> dict:
        t = self.targets
        return {
            "n_pairs": t["n_pairs"],
            "step_length_range": (t["step_length_min"], t["step_length_max"]),
            "jitter": t["jitter"],
        }


def load_settings(path=None, overrides: dict | None = None) -> Settings:
    """Assemble every config object from an optional file plus overrides.

    `overrides` uses the same two-level {section: {key: value}} shape and
    wins over the file."""
    raw = parse_config_file(path) if path else {}
    if overrides:
        for section, values in overrides.items():
            raw.setdefault(section, {}).update(values)

    tg_section = dict(raw.get("tg", {}))
    init = {k: tg_section.pop(k, v) for k, v in TG_STATE_DEFAULTS.items()}
    tg_cfg = _build(TgConfig, tg_section, "tg")
    tg_init = TgState(phase=0.0, frequency=init["init_frequency"],
                      step_length=init["init_step_length"],
                      standing_height=init["init_standing_height"])
    reward_cfg = _build(RewardConfig, raw.get("reward", {}), "reward")
    env_cfg = _build(EnvConfig, raw.get("env", {}), "env",
                     tg=tg_cfg, tg_init=tg_init, reward=reward_cfg)

    train_section = dict(raw.get("train", {}))
    if "hidden" in train_section:
        train_section["hidden"] = tuple(train_section["hidden"])
    train_cfg = _build(TrainConfig, train_section, "train")
    train_cfg = dataclasses.replace(train_cfg, seed=resolve_seed(train_cfg.seed))

    hlp_cfg = _build(HlpConfig, raw.get("hlp", {}), "hlp")
    terrain = _take(TERRAIN_DEFAULTS, raw.get("terrain", {}), "terrain")
    targets = _take(TARGET_DEFAULTS, raw.get("targets", {}), "targets")
    return Settings(env_cfg, train_cfg, hlp_cfg, terrain, targets, raw)

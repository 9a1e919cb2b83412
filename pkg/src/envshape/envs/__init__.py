"""Benchmark tasks with exact tabular export."""

from .base import (
    ACTION_NAMES,
    LEFT,
    RIGHT,
    EpisodicEnv,
    EpisodicEnvConfig,
    EpisodicState,
    PotentialShapedEnv,
    StateCodec,
    TabularEnv,
    Trajectory,
    builtin_abstraction,
    encoding_matrix,
    index_potential,
    key_potential,
    potential_shaped_mdp,
    terminal_mask,
    to_tabular,
)
from .catcher import CatcherEnv
from .gathering import GatheringEnv


def build_gathering(cfg: EpisodicEnvConfig | None = None) -> GatheringEnv:
    return GatheringEnv(cfg)


def build_catcher(cfg: EpisodicEnvConfig | None = None) -> CatcherEnv:
    return CatcherEnv(cfg)


def build_env(cfg: EpisodicEnvConfig) -> EpisodicEnv:
    return GatheringEnv(cfg) if cfg.env_kind == "gathering" else CatcherEnv(cfg)

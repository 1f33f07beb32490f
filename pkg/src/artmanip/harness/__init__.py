"""Experiment harness: environments, episodes, suites, exports, CLI."""

from .env import (
    Environment,
    GoalRanges,
    env_for_object,
    facing_base,
    make_demonstrations,
    make_env,
    sample_goal,
)
from .episodes import (
    Episode,
    EpisodeResult,
    CvaeSampler,
    PoolReplayModel,
    pool_executor,
    run_entry,
    run_episode,
)
from .suite import run_suite
from .export import export_scene, load_ply

__all__ = [
    "Environment", "GoalRanges", "env_for_object", "facing_base",
    "make_demonstrations", "make_env", "sample_goal",
    "Episode", "EpisodeResult", "CvaeSampler", "PoolReplayModel",
    "pool_executor", "run_entry", "run_episode",
    "run_suite", "export_scene", "load_ply",
]

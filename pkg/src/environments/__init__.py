"""Benchmark cMDP builders, map files and the trajectory sampler."""

from typing import Dict, Optional

from src.core.cmdp import Cmdp
from src.environments.box import build_box
from src.environments.common import (
    EnvConfig,
    absorbing_states,
    add_null_action,
    settled_states,
    with_arrival_states,
)
from src.environments.grid_map import (
    BOX_WORLD,
    MARS,
    GridMap,
    MapParseError,
    default_map,
    load_map,
    parse_map,
)
from src.environments.mars_rover import build_mars_rover
from src.environments.random_cmdp import build_random_cmdp
from src.environments.sampler import SampledStep, sample_step

ENVIRONMENTS = ("mars", "box", "random")


def build_environment(
    env: str,
    cfg: EnvConfig = EnvConfig(),
    map_path: Optional[str] = None,
    random_params: Optional[Dict] = None,
) -> Cmdp:
    """
    Build a named environment.

    ``random_params`` holds ``seed``, ``states``, ``actions``, ``resources``
    and ``sparsity`` for the random generator; the horizon comes from ``cfg``.
    A null action, when requested, is always the last action.
    """
    if env == "mars":
        grid = load_map(map_path, MARS) if map_path else default_map(MARS)
        return build_mars_rover(grid, cfg)
    if env == "box":
        grid = load_map(map_path, BOX_WORLD) if map_path else default_map(BOX_WORLD)
        return build_box(grid, cfg)
    if env == "random":
        params = dict(random_params or {})
        cmdp = build_random_cmdp(
            seed=int(params.get("seed", 0)),
            num_states=int(params.get("states", 3)),
            num_actions=int(params.get("actions", 2)),
            horizon=cfg.horizon,
            num_resources=int(params.get("resources", 1)),
            sparsity=params.get("sparsity"),
        )
        if cfg.include_null_action:
            cmdp, _ = add_null_action(cmdp)
        return cmdp
    raise ValueError(f"Unknown environment: {env}")


__all__ = [
    "ENVIRONMENTS",
    "EnvConfig",
    "GridMap",
    "MapParseError",
    "SampledStep",
    "absorbing_states",
    "add_null_action",
    "build_box",
    "build_environment",
    "build_mars_rover",
    "build_random_cmdp",
    "default_map",
    "load_map",
    "parse_map",
    "sample_step",
    "settled_states",
    "with_arrival_states",
]

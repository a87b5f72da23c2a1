"""Mars rover grid world: reach the goal, avoid crashing into rocks."""

import numpy as np

from src.core.cmdp import Cmdp
from src.environments.common import (
    EnvConfig,
    add_null_action,
    slip_transitions,
    with_arrival_states,
)
from src.environments.grid_map import GOAL, MOVES, ROCK, START, GridMap
from src.utils.logger import get_logger

logger = get_logger(__name__)


def build_mars_rover(grid: GridMap, cfg: EnvConfig = EnvConfig()) -> Cmdp:
    """
    Build the Mars rover cMDP.

    States are the free cells in row-major order, followed by one
    "arrived this step" state per goal or rock cell; actions are up, down,
    left, right. Goal and rock cells are absorbing. Entering the goal pays
    reward 1 on the entering step, and every later step pays 1/H. Rocks
    consume the single resource the same way: 1 on the crash, then 1/H per
    step. The mean of a move is its probability of entering.
    """
    H = cfg.horizon
    cells = grid.free_cells()
    index = grid.cell_index()
    goal_cells = np.array([grid.at(cell) == GOAL for cell in cells])
    rock_cells = np.array([grid.at(cell) == ROCK for cell in cells])
    absorbing = goal_cells | rock_cells

    moves = slip_transitions(
        len(cells),
        len(MOVES),
        lambda s, a: index[grid.step(cells[s], a)],
        cfg.slip,
        absorbing=absorbing,
    )
    p, underlying = with_arrival_states(moves, absorbing)
    S = p.shape[0]
    goal = goal_cells[underlying]
    rock = rock_cells[underlying]
    settled = absorbing[underlying]
    arrival = np.arange(S) >= len(cells)

    arrival_reward = (arrival & goal).astype(float)
    arrival_crash = (arrival & rock).astype(float)
    rewards = p @ arrival_reward
    crash = p @ arrival_crash
    rewards[settled] = np.where(goal[settled], 1.0 / H, 0.0)[:, None]
    crash[settled] = np.where(rock[settled], 1.0 / H, 0.0)[:, None]

    cmdp = Cmdp(
        transitions=p,
        rewards=np.clip(rewards, 0.0, 1.0),
        consumption=np.clip(crash, 0.0, 1.0)[:, :, None],
        budgets=[cfg.budget],
        horizon=H,
        initial_state=index[grid.find(START)[0]],
        arrival_rewards=arrival_reward,
        arrival_consumption=arrival_crash[:, None],
    )
    logger.info(
        f"Built Mars rover cMDP: S={S}, A={len(MOVES)}, H={H}, "
        f"rocks={int(rock_cells.sum())}, slip={cfg.slip}"
    )
    if cfg.include_null_action:
        cmdp, _ = add_null_action(cmdp)
    return cmdp

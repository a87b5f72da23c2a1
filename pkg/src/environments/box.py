"""Box world: walk to the goal while keeping the box out of corners."""

from collections import deque
from typing import Dict, List, Tuple

import numpy as np

from src.core.cmdp import Cmdp
from src.environments.common import (
    EnvConfig,
    add_null_action,
    slip_transitions,
    with_arrival_states,
)
from src.environments.grid_map import BOX, GOAL, MOVES, START, Cell, GridMap
from src.utils.logger import get_logger

logger = get_logger(__name__)

BoxState = Tuple[Cell, Cell]


def push(grid: GridMap, state: BoxState, move: int) -> BoxState:
    """Deterministic effect of a move; a blocked push leaves agent and box in place."""
    agent, box = state
    target = grid.step(agent, move)
    if target == agent:
        return state
    if target != box:
        return target, box
    box_target = grid.step(box, move)
    if box_target == box:
        return state
    return target, box_target


def reachable_states(grid: GridMap, start: BoxState, is_absorbing) -> List[BoxState]:
    """Breadth-first enumeration of (agent, box) pairs reachable from ``start``."""
    seen = {start}
    order = [start]
    queue = deque([start])
    while queue:
        state = queue.popleft()
        if is_absorbing(state):
            continue
        for move in range(len(MOVES)):
            following = push(grid, state, move)
            if following not in seen:
                seen.add(following)
                order.append(following)
                queue.append(following)
    return order


def build_box(grid: GridMap, cfg: EnvConfig = EnvConfig()) -> Cmdp:
    """
    Build the Box cMDP.

    States are reachable (agent cell, box cell) pairs, followed by an
    "arrived this step" copy of every goal state. The agent reaching the
    goal is absorbing and rewarded (1 on the entering step, 1/H per step
    afterwards); with ``cfg.box_goal`` the box reaching the goal is. The
    single resource costs 1/H on every step the box sits in a corner.
    """
    H = cfg.horizon
    goal = grid.find(GOAL)[0]
    start = (grid.find(START)[0], grid.find(BOX)[0])

    def is_goal(state: BoxState) -> bool:
        return (state[1] if cfg.box_goal else state[0]) == goal

    states = reachable_states(grid, start, is_goal)
    index: Dict[BoxState, int] = {state: i for i, state in enumerate(states)}
    A = len(MOVES)
    goal_cells = np.array([is_goal(state) for state in states])

    moves = slip_transitions(
        len(states),
        A,
        lambda s, a: s if goal_cells[s] else index[push(grid, states[s], a)],
        cfg.slip,
        absorbing=goal_cells,
    )
    p, underlying = with_arrival_states(moves, goal_cells)
    S = p.shape[0]
    goal_mask = goal_cells[underlying]
    arrival_reward = (np.arange(S) >= len(states)).astype(float)
    rewards = p @ arrival_reward
    rewards[goal_mask] = 1.0 / H
    corner = np.array([grid.is_corner(states[u][1]) for u in underlying], dtype=float)
    consumption = np.repeat((corner / H)[:, None], A, axis=1)

    cmdp = Cmdp(
        transitions=p,
        rewards=np.clip(rewards, 0.0, 1.0),
        consumption=consumption[:, :, None],
        budgets=[cfg.budget],
        horizon=H,
        initial_state=index[start],
        arrival_rewards=arrival_reward,
    )
    logger.info(
        f"Built Box cMDP: S={S}, A={A}, H={H}, corners={len(grid.corner_cells())}, "
        f"goal={'box' if cfg.box_goal else 'agent'}, slip={cfg.slip}"
    )
    if cfg.include_null_action:
        cmdp, _ = add_null_action(cmdp)
    return cmdp

"""Shared environment settings, slip dynamics and the null-action extension."""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from src.core.cmdp import Cmdp, CmdpValidationError

DEFAULT_SLIP = 0.1
DEFAULT_HORIZON = 30
DEFAULT_BUDGET = 0.2


@dataclass(frozen=True)
class EnvConfig:
    """
    Builder settings.

    ``budget`` is the per-episode budget of the single resource; ``box_goal``
    switches the Box world to rewarding the box (not the agent) reaching the
    goal.
    """

    slip: float = DEFAULT_SLIP
    horizon: int = DEFAULT_HORIZON
    include_null_action: bool = False
    budget: float = DEFAULT_BUDGET
    box_goal: bool = False

    def __post_init__(self):
        if not 0.0 <= self.slip <= 1.0:
            raise CmdpValidationError(f"slip must lie in [0, 1], got {self.slip}")
        if self.horizon < 1:
            raise CmdpValidationError(f"horizon must be positive, got {self.horizon}")
        if self.budget < 0:
            raise CmdpValidationError(f"budget must be nonnegative, got {self.budget}")


def slip_transitions(
    num_states: int,
    num_moves: int,
    successor: Callable[[int, int], int],
    slip: float,
    absorbing: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Transition table where the intended move is replaced by a uniformly
    random move with probability ``slip``:
    ``p(.|s, a) = (1 - slip) move(a) + (slip / A) sum_a' move(a')``.

    ``successor(s, move)`` gives the deterministic next state. Absorbing
    states self-loop under every action.
    """
    moves = np.zeros((num_states, num_moves, num_states))
    for s in range(num_states):
        for a in range(num_moves):
            moves[s, a, successor(s, a)] = 1.0
    p = (1.0 - slip) * moves + (slip / num_moves) * moves.sum(axis=1, keepdims=True)
    if absorbing is not None:
        for s in np.flatnonzero(absorbing):
            p[s] = 0.0
            p[s, :, s] = 1.0
    # Exact row sums after mixing
    return p / p.sum(axis=2, keepdims=True)


def with_arrival_states(p: np.ndarray, absorbing: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Give every absorbing state ``x`` an "arrived this step" copy.

    Moves from transient states into ``x`` land in the copy instead, and the
    copy moves to ``x`` under every action, so entering ``x`` is a
    transition of its own. Copies are appended after the original states.

    Returns:
        (extended transitions, underlying original state of every extended state)
    """
    S, A, _ = p.shape
    targets = np.flatnonzero(absorbing)
    transient = np.flatnonzero(~np.asarray(absorbing, dtype=bool))
    extended = np.zeros((S + targets.size, A, S + targets.size))
    extended[:S, :, :S] = p
    for j, x in enumerate(targets):
        arrival = S + j
        extended[transient, :, arrival] = p[transient, :, x]
        extended[transient, :, x] = 0.0
        extended[arrival, :, x] = 1.0
    return extended, np.concatenate([np.arange(S), targets])


def absorbing_states(cmdp: Cmdp) -> np.ndarray:
    """Boolean mask of states that self-loop with probability 1 under every action."""
    S = cmdp.num_states
    loops = cmdp.transitions[np.arange(S), :, np.arange(S)]
    return np.all(loops == 1.0, axis=1)


def settled_states(cmdp: Cmdp) -> np.ndarray:
    """Absorbing states, plus states whose actions all move together into one of them."""
    absorbing = absorbing_states(cmdp)
    p = cmdp.transitions
    identical = np.all(p == p[:, :1, :], axis=(1, 2))
    into_absorbing = np.all(p[:, :, absorbing].sum(axis=2) == 1.0, axis=1)
    return absorbing | (identical & into_absorbing)


def add_null_action(cmdp: Cmdp) -> Tuple[Cmdp, int]:
    """
    Append an absorbing zero sink state and a null action.

    From transient states the null action moves to the sink with zero reward
    and consumption. Settled states are the exception: in absorbing states,
    and in the arrival states leading into them, the null action copies
    action 0 (same successor, reward and consumption) instead of leaving for
    the sink. The sink self-loops under every action with zero reward and
    consumption.

    Returns:
        (extended cMDP, index of the null action)
    """
    S, A, d = cmdp.num_states, cmdp.num_actions, cmdp.num_resources
    sink, null = S, A
    settled = settled_states(cmdp)

    p = np.zeros((S + 1, A + 1, S + 1))
    p[:S, :A, :S] = cmdp.transitions
    r = np.zeros((S + 1, A + 1))
    r[:S, :A] = cmdp.rewards
    c = np.zeros((S + 1, A + 1, d))
    c[:S, :A] = cmdp.consumption

    for s in range(S):
        if settled[s]:
            p[s, null, :S] = cmdp.transitions[s, 0]
            r[s, null] = cmdp.rewards[s, 0]
            c[s, null] = cmdp.consumption[s, 0]
        else:
            p[s, null, sink] = 1.0
    p[sink, :, sink] = 1.0

    extended = Cmdp(
        transitions=p,
        rewards=r,
        consumption=c,
        budgets=cmdp.budgets,
        horizon=cmdp.horizon,
        initial_state=cmdp.initial_state,
        arrival_rewards=_with_sink(cmdp.arrival_rewards),
        arrival_consumption=_with_sink(cmdp.arrival_consumption),
    )
    return extended, null


def _with_sink(payout: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if payout is None:
        return None
    return np.concatenate([payout, np.zeros((1,) + payout.shape[1:])])

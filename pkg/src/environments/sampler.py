"""Trajectory sampling from a known cMDP."""

from dataclasses import dataclass

import numpy as np

from src.core.cmdp import Cmdp, StructuralError, draw_index


@dataclass(frozen=True, eq=False)
class SampledStep:
    reward: float
    consumption: np.ndarray
    next_state: int


def sample_step(cmdp: Cmdp, s: int, a: int, rng: np.random.Generator) -> SampledStep:
    """
    One transition: the next state by inverse CDF on a single uniform draw.

    Reward and consumption are the means of (s, a), except where the cMDP
    pays on arrival; those pairs observe the payout of the state entered.
    """
    if not (0 <= s < cmdp.num_states and 0 <= a < cmdp.num_actions):
        raise StructuralError(f"state-action ({s}, {a}) out of range")
    following = draw_index(cmdp.transitions[s, a], rng.random())
    reward, consumption = cmdp.realized_payout(s, a, following)
    return SampledStep(reward=reward, consumption=consumption, next_state=following)

"""Seeded random cMDPs for tests and benchmarks."""

from typing import Optional

import numpy as np

from src.core.cmdp import Cmdp, Policy, evaluate_policy

BUDGET_FACTOR_RANGE = (1.0, 1.25)


def build_random_cmdp(
    seed: int,
    num_states: int,
    num_actions: int,
    horizon: int,
    num_resources: int = 1,
    sparsity: Optional[int] = None,
) -> Cmdp:
    """
    Random cMDP that is a deterministic function of ``seed``.

    Each transition row puts normalized weights drawn from (0.1, 1) on a
    random support of ``sparsity`` states (all states by default). Rewards
    and consumption are uniform on [0, 1]. Each budget is the uniform
    policy's expected consumption times a factor drawn from [1, 1.25], so
    the uniform policy is always feasible.
    """
    S, A, H, d = num_states, num_actions, horizon, num_resources
    if min(S, A, H) < 1 or d < 0:
        raise ValueError("sizes must be positive (d nonnegative)")
    sparsity = S if sparsity is None else int(sparsity)
    if not 1 <= sparsity <= S:
        raise ValueError(f"sparsity must lie in [1, {S}], got {sparsity}")

    rng = np.random.default_rng(seed)
    p = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            support = rng.choice(S, size=sparsity, replace=False)
            weights = rng.uniform(0.1, 1.0, size=sparsity)
            p[s, a, support] = weights / weights.sum()
    rewards = rng.uniform(0.0, 1.0, size=(S, A))
    consumption = rng.uniform(0.0, 1.0, size=(S, A, d))

    uniform = Policy.uniform(H, S, A)
    uniform_use = np.array(
        [evaluate_policy(p, consumption[:, :, i], uniform, H).value(0) for i in range(d)]
    )
    factors = rng.uniform(*BUDGET_FACTOR_RANGE, size=d)
    return Cmdp(
        transitions=p,
        rewards=rewards,
        consumption=consumption,
        budgets=uniform_use * factors,
        horizon=H,
        initial_state=0,
    )

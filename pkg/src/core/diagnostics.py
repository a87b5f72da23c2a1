"""Checks of the confidence-bonus and optimism guarantees, and knapsack bound helpers."""

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Sequence

import numpy as np

from src.core.cmdp import (
    AnyPolicy,
    Cmdp,
    MixturePolicy,
    StructuralError,
    evaluate_policy,
    mixture_value,
)
from src.core.estimation import BonusEnhancedModel, BonusTable, EmpiricalModel

if TYPE_CHECKING:
    from src.core.conrl import RegretReport

VALIDITY_TOLERANCE = 1e-9


def _stage_values(truth: Cmdp, m: np.ndarray, policy: AnyPolicy) -> np.ndarray:
    """(S, H + 1) value table of ``policy`` on objective ``m``; mixtures are weighted."""
    H = truth.horizon
    if isinstance(policy, MixturePolicy):
        return sum(
            w * evaluate_policy(truth.transitions, m, component, H).V
            for w, component in zip(policy.weights, policy.components)
        )
    return evaluate_policy(truth.transitions, m, policy, H).V


def _objectives(truth: Cmdp) -> List[np.ndarray]:
    return [truth.rewards] + [truth.consumption[:, :, i] for i in range(truth.num_resources)]


def bonus_validity_violations(
    truth: Cmdp,
    emp: EmpiricalModel,
    bonus: BonusTable,
    reference: AnyPolicy,
) -> int:
    """
    Count the (s, a, h, objective) tuples where the bonus fails to cover the model error.

    The bonus is valid when
    ``|(m_hat - m)(s, a) + sum_s' (p_hat - p)(s'|s, a) V_m(s', h + 1)| <= b(s, a)``
    for the reward and every resource, with ``V_m`` the exact value of
    ``reference`` on the truth. Zero means valid.
    """
    b = np.asarray(bonus.b, dtype=float)
    if emp.p_hat.shape != truth.transitions.shape or b.shape != truth.rewards.shape:
        raise StructuralError("empirical model and bonus must match the true cMDP sizes")
    estimates = [emp.r_hat] + [emp.c_hat[:, :, i] for i in range(truth.num_resources)]
    dp = emp.p_hat - truth.transitions
    violations = 0
    for m_hat, m in zip(estimates, _objectives(truth)):
        V = _stage_values(truth, m, reference)
        # (S, A, H): stage h uses V at h + 1
        error = (m_hat - m)[:, :, None] + np.einsum("sat,th->sah", dp, V[:, 1:])
        violations += int(np.count_nonzero(np.abs(error) > b[:, :, None] + VALIDITY_TOLERANCE))
    return violations


@dataclass(frozen=True, eq=False)
class OptimismGaps:
    """
    ``reward`` is the model's reward value of the reference policy minus the
    true one; ``consumption[i]`` is the true consumption value minus the
    model's. Both are nonnegative on an optimistic model.
    """

    reward: float
    consumption: np.ndarray

    def holds(self, tolerance: float = 1e-9) -> bool:
        return self.reward >= -tolerance and bool(np.all(self.consumption >= -tolerance))


def optimism_gaps(truth: Cmdp, model: BonusEnhancedModel, reference: AnyPolicy) -> OptimismGaps:
    """Compare the reference policy's values on the bonus-enhanced model and on the truth."""
    H, s0 = truth.horizon, truth.initial_state
    model_reward = mixture_value(model.p, model.r_plus, reference, H, s0)
    true_reward = mixture_value(truth.transitions, truth.rewards, reference, H, s0)
    consumption = np.array(
        [
            mixture_value(truth.transitions, truth.consumption[:, :, i], reference, H, s0)
            - mixture_value(model.p, model.c_minus[:, :, i], reference, H, s0)
            for i in range(truth.num_resources)
        ]
    )
    return OptimismGaps(reward=model_reward - true_reward, consumption=consumption)


def knapsack_reward_bound(aggreg: float, budgets: Sequence[float], horizon: int) -> float:
    """
    Knapsack reward-regret guarantee ``2 H AggReg / min_i B_i``.

    Raises:
        ValueError: if the smallest budget does not exceed ``aggreg``
    """
    smallest = float(np.min(budgets))
    if smallest <= aggreg:
        raise ValueError(f"bound needs min budget {smallest} > aggregate regret {aggreg}")
    return 2.0 * horizon * aggreg / smallest


def measured_aggregate_regret(report: "RegretReport") -> float:
    """``k * max(RewReg(k), ConsReg(k), 0)`` after the last logged episode."""
    k = report.rew_reg.size
    if k == 0:
        return 0.0
    return float(k * max(report.rew_reg[-1], report.cons_reg[-1], 0.0))

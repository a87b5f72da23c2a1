"""Constrained planners over occupancy measures, value iteration and the regret-bound formula."""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from src.core.cmdp import (
    AnyPolicy,
    MixturePolicy,
    OccupancyMeasure,
    Policy,
    StructuralError,
    ValueTables,
    expected_consumption,
    expected_total,
    mixture_occupancy,
    occupancy_from_policy,
    policy_from_occupancy,
)
from src.core.estimation import BonusEnhancedModel
from src.core.simplex import (
    INFEASIBLE,
    UNBOUNDED,
    LpProblem,
    SolverError,
    SolverOptions,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

STATUS_OPTIMAL = "optimal"
STATUS_NULL_FALLBACK = "null_fallback"
STATUS_UNIFORM_FALLBACK = "uniform_fallback"

DEFAULT_SOLVER = SolverOptions()


class PlannerInfeasibleError(Exception):
    """The planning program has no feasible point under the given model."""

    pass


class PlannerConfigurationError(Exception):
    """Planner hyperparameters are invalid or a precondition on them fails."""

    pass


@dataclass(eq=False)
class PlannerSolution:
    """
    Output of a constrained planner.

    ``occupancy`` and the predictions refer to the planning model, not the
    true cMDP.
    """

    policy: AnyPolicy
    occupancy: OccupancyMeasure
    predicted_reward: float
    predicted_consumption: np.ndarray
    status: str = STATUS_OPTIMAL
    info: Dict = field(default_factory=dict)


@dataclass(frozen=True)
class LagrConfig:
    eta: float = 0.2
    iterations: int = 500

    def __post_init__(self):
        if not self.eta > 0:
            raise PlannerConfigurationError(f"eta must be positive, got {self.eta}")
        if int(self.iterations) < 1:
            raise PlannerConfigurationError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True)
class KnapsackConfig:
    """
    Cumulative budgets over ``total_episodes`` episodes.

    ``epsilon`` is a float in [0, 1) or ``"auto"``; in auto mode it is
    resolved from the aggregate regret bound with ``bound_constant``, or
    from ``aggreg`` when a measured aggregate regret is supplied.
    """

    budgets: Sequence[float]
    total_episodes: int
    epsilon: Union[float, str] = "auto"
    bound_constant: float = 1.0
    delta: float = 0.1
    aggreg: Optional[float] = None

    def __post_init__(self):
        budgets = tuple(float(b) for b in np.atleast_1d(self.budgets))
        object.__setattr__(self, "budgets", budgets)
        if any(b < 0 for b in budgets):
            raise PlannerConfigurationError("knapsack budgets must be nonnegative")
        if int(self.total_episodes) < 1:
            raise PlannerConfigurationError("total_episodes must be >= 1")
        if self.bound_constant <= 0:
            raise PlannerConfigurationError("bound_constant must be positive")
        if self.epsilon != "auto":
            eps = float(self.epsilon)
            if not 0.0 <= eps <= 1.0:
                raise PlannerConfigurationError(f"epsilon must lie in [0, 1], got {eps}")
            object.__setattr__(self, "epsilon", eps)

    def resolve_epsilon(self, num_states: int, num_actions: int, horizon: int) -> float:
        """Fixed epsilon, or the auto choice AggReg / min_i B_i."""
        if self.epsilon != "auto":
            return float(self.epsilon)
        aggreg = self.aggreg
        if aggreg is None:
            aggreg = agg_reg_bound(
                self.total_episodes,
                num_states,
                num_actions,
                horizon,
                len(self.budgets),
                self.delta,
                self.bound_constant,
            )
        return epsilon_for_knapsack(aggreg, self.budgets)

    def per_episode_budget(self, epsilon: float) -> np.ndarray:
        return (1.0 - epsilon) * np.asarray(self.budgets, dtype=float) / self.total_episodes


def _variable_index(h: int, s: int, a: int, S: int, A: int) -> int:
    return (h * S + s) * A + a


def build_occupancy_lp(
    p: np.ndarray,
    objective: np.ndarray,
    consumption: np.ndarray,
    budgets: Sequence[float],
    s0: int,
    H: int,
) -> LpProblem:
    """
    Occupancy-measure program for one planning model.

    Variables are ``rho(s, a, h)`` at index ``(h * S + s) * A + a`` (0-based
    stage). Constraints: one budget row per resource, flow conservation
    between consecutive stages, unit mass at stage 1, and zero upper bounds
    on stage-1 variables of states other than ``s0``.
    """
    p = np.asarray(p, dtype=float)
    objective = np.asarray(objective, dtype=float)
    consumption = np.asarray(consumption, dtype=float)
    budgets = np.asarray(budgets, dtype=float).reshape(-1)
    S, A = objective.shape
    if p.shape != (S, A, S) or consumption.shape[:2] != (S, A):
        raise StructuralError("planning tables have mismatching dimensions")
    if consumption.ndim != 3 or consumption.shape[2] != budgets.size:
        raise StructuralError(
            f"consumption {consumption.shape} does not match {budgets.size} budgets"
        )
    n = H * S * A
    d = budgets.size

    # Stage-major flattening: x[h * S * A + s * A + a]
    c_obj = np.tile(objective.reshape(-1), H)
    ub = np.tile(np.transpose(consumption, (2, 0, 1)).reshape(d, S * A), (1, H))

    rows, cols, vals = [], [], []
    row = 0
    for h in range(H - 1):
        for t in range(S):
            for a in range(A):
                rows.append(row + t)
                cols.append(_variable_index(h + 1, t, a, S, A))
                vals.append(1.0)
        inflow = p.reshape(S * A, S)
        src, dst = np.nonzero(inflow)
        rows.extend((row + dst).tolist())
        cols.extend((h * S * A + src).tolist())
        vals.extend((-inflow[src, dst]).tolist())
        row += S
    # Normalization at stage 1 only; later stages inherit unit mass through flow
    rows.extend([row] * (S * A))
    cols.extend(range(S * A))
    vals.extend([1.0] * (S * A))
    row += 1
    eq = sparse.coo_matrix((vals, (rows, cols)), shape=(row, n)).tocsr()
    eq_rhs = np.zeros(row)
    eq_rhs[-1] = 1.0

    bounds = np.column_stack([np.zeros(n), np.full(n, np.inf)])
    for s in range(S):
        if s != s0:
            for a in range(A):
                bounds[_variable_index(0, s, a, S, A), 1] = 0.0

    return LpProblem(
        objective=c_obj,
        eq_matrix=eq,
        eq_rhs=eq_rhs,
        ub_matrix=ub,
        ub_rhs=budgets,
        bounds=bounds,
    )


def occupancy_from_lp_values(values: np.ndarray, S: int, A: int, H: int) -> OccupancyMeasure:
    """Reshape an LP solution into an occupancy measure, removing solver round-off."""
    rho = np.transpose(np.asarray(values, dtype=float).reshape(H, S, A), (1, 2, 0))
    rho = np.clip(rho, 0.0, 1.0)
    mass = rho.sum(axis=(0, 1), keepdims=True)
    if np.any(mass <= 0):
        raise SolverError("LP solution has an empty stage")
    return OccupancyMeasure(rho / mass)


def solve_occupancy_lp(
    p: np.ndarray,
    objective: np.ndarray,
    consumption: np.ndarray,
    budgets: Sequence[float],
    s0: int,
    H: int,
    solver: SolverOptions = DEFAULT_SOLVER,
) -> PlannerSolution:
    """
    Maximize ``objective`` over occupancy measures subject to budget rows.

    Raises:
        PlannerInfeasibleError: if no occupancy measure meets the budgets
        SolverError: on a numerical failure or an unbounded program
    """
    S, A = np.asarray(objective).shape
    problem = build_occupancy_lp(p, objective, consumption, budgets, s0, H)
    solution = solver.solve(problem)
    if solution.status == INFEASIBLE:
        raise PlannerInfeasibleError(
            f"no occupancy measure satisfies budgets {np.asarray(budgets).tolist()}"
        )
    if solution.status == UNBOUNDED:
        raise SolverError("occupancy program reported unbounded")

    occupancy = occupancy_from_lp_values(solution.values, S, A, H)
    policy = policy_from_occupancy(occupancy)
    return PlannerSolution(
        policy=policy,
        occupancy=occupancy,
        predicted_reward=expected_total(occupancy, objective),
        predicted_consumption=expected_consumption(occupancy, consumption),
        info={
            "lp_objective": solution.objective_value,
            "lp_iterations": solution.iterations,
            "lp_backend": solution.backend,
        },
    )


def basic_conplanner(
    model: BonusEnhancedModel,
    xi: Sequence[float],
    s0: int,
    H: int,
    solver: SolverOptions = DEFAULT_SOLVER,
) -> PlannerSolution:
    """
    Optimistic constrained plan: the occupancy LP on the bonus-enhanced model.

    Args:
        model: bonus-enhanced model (rewards r_hat + b, consumption c_hat - b)
        xi: per-episode budgets, one per resource
        s0: initial state
        H: horizon
        solver: LP backend options

    Returns:
        PlannerSolution with the extracted policy and model predictions

    Raises:
        PlannerInfeasibleError: if the program is infeasible under the model
    """
    return solve_occupancy_lp(model.p, model.r_plus, model.c_minus, xi, s0, H, solver)


def value_iteration(p: np.ndarray, r: np.ndarray, H: int) -> Tuple[ValueTables, Policy]:
    """Finite-horizon value iteration; the greedy policy breaks ties toward the lowest action index."""
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.shape != p.shape[:2]:
        raise StructuralError(f"objective shape {r.shape} does not match transitions {p.shape}")
    S, A = r.shape
    Q = np.zeros((S, A, H))
    V = np.zeros((S, H + 1))
    actions = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q[:, :, h] = r + p @ V[:, h + 1]
        actions[h] = np.argmax(Q[:, :, h], axis=1)
        V[:, h] = Q[np.arange(S), actions[h], h]
    return ValueTables(Q=Q, V=V), Policy.deterministic(actions, A)


def solution_from_policy(
    policy: AnyPolicy,
    p: np.ndarray,
    r: np.ndarray,
    c: np.ndarray,
    s0: int,
    H: int,
    status: str = STATUS_OPTIMAL,
    info: Optional[Dict] = None,
) -> PlannerSolution:
    occupancy = mixture_occupancy(p, policy, s0, H)
    return PlannerSolution(
        policy=policy,
        occupancy=occupancy,
        predicted_reward=expected_total(occupancy, r),
        predicted_consumption=expected_consumption(occupancy, c),
        status=status,
        info=info or {},
    )


def lagr_conplanner(
    model: BonusEnhancedModel,
    xi: Sequence[float],
    s0: int,
    H: int,
    cfg: LagrConfig = LagrConfig(),
) -> PlannerSolution:
    """
    Lagrangian heuristic planner.

    Multipliers ``lam <= 0`` start at zero. Each iteration runs value
    iteration on ``r + sum_i lam_i (c_i - xi_i / H)``, then moves each
    multiplier against the excess of the greedy policy's expected
    consumption over its budget. The uniform mixture of all greedy
    policies is returned; ``info`` carries the final multipliers and the
    mean squared budget excess of the iterates.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.size != model.num_resources:
        raise StructuralError(f"{xi.size} budgets for {model.num_resources} resources")
    lam = np.zeros(xi.size)
    offsets = model.c_minus - xi[None, None, :] / H
    iterates = []
    squared_excess = 0.0
    for t in range(int(cfg.iterations)):
        pseudo = model.r_plus + np.einsum("sai,i->sa", offsets, lam)
        _, greedy = value_iteration(model.p, pseudo, H)
        iterates.append(greedy)
        consumption = expected_consumption(
            occupancy_from_policy(model.p, greedy, s0, H), model.c_minus
        )
        squared_excess += float(np.sum((consumption - xi) ** 2))
        lam = np.minimum(0.0, lam - cfg.eta * (consumption - xi))
        if t % 100 == 0:
            logger.debug(f"Lagrangian iteration {t}: multipliers={lam.tolist()}")

    mixture = MixturePolicy.uniform_over(iterates)
    return solution_from_policy(
        mixture,
        model.p,
        model.r_plus,
        model.c_minus,
        s0,
        H,
        info={
            "multipliers": lam.tolist(),
            "components": len(mixture.components),
            "mean_squared_excess": squared_excess / int(cfg.iterations),
        },
    )


def null_policy_solution(
    model: BonusEnhancedModel, null_action: int, s0: int, H: int
) -> PlannerSolution:
    """The policy playing the null action everywhere, evaluated on the model."""
    policy = Policy.constant_action(H, model.num_states, model.num_actions, null_action)
    return solution_from_policy(
        policy, model.p, model.r_plus, model.c_minus, s0, H, status=STATUS_NULL_FALLBACK
    )


def knapsack_conplanner(
    model: BonusEnhancedModel,
    cfg: KnapsackConfig,
    null_action: int,
    s0: int,
    H: int,
    solver: SolverOptions = DEFAULT_SOLVER,
) -> PlannerSolution:
    """
    Tightened per-episode plan ``xi = (1 - eps) B / K``.

    Falls back to the pure null policy, with status ``null_fallback``, when
    the tightened program is infeasible under the model.
    """
    if not 0 <= null_action < model.num_actions:
        raise PlannerConfigurationError(f"null action {null_action} out of range")
    if len(cfg.budgets) != model.num_resources:
        raise PlannerConfigurationError(
            f"{len(cfg.budgets)} budgets for {model.num_resources} resources"
        )
    epsilon = cfg.resolve_epsilon(model.num_states, model.num_actions, H)
    xi = cfg.per_episode_budget(epsilon)
    try:
        solution = basic_conplanner(model, xi, s0, H, solver)
    except PlannerInfeasibleError as e:
        logger.warning(f"Knapsack plan infeasible, playing the null policy: {e}")
        solution = null_policy_solution(model, null_action, s0, H)
    solution.info.update({"epsilon": epsilon, "per_episode_budget": xi.tolist()})
    return solution


def agg_reg_bound(
    k: int,
    S: int,
    A: int,
    H: int,
    d: int,
    delta: float,
    c_const: float = 1.0,
) -> float:
    """
    Aggregate (k times per-episode) reward/consumption regret bound.

    ``k * [ (c / sqrt(k)) H^2.5 S sqrt(A) sqrt(ln k ln(SAH(d+1)k / delta))
    + (c / k) S^1.5 A H^3 sqrt(ln(2SAH(d+1)k / delta)) ]``
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    size = S * A * H * (d + 1) * k
    first = (c_const / math.sqrt(k)) * H**2.5 * S * math.sqrt(A) * math.sqrt(
        math.log(k) * math.log(size / delta)
    )
    second = (c_const / k) * S**1.5 * A * H**3 * math.sqrt(math.log(2.0 * size / delta))
    return k * (first + second)


def epsilon_for_knapsack(aggreg: float, budgets: Sequence[float]) -> float:
    """
    Tightening ``AggReg / min_i B_i``.

    Raises:
        PlannerConfigurationError: if ``min_i B_i <= AggReg``
    """
    smallest = float(np.min(budgets))
    if smallest <= 0 or smallest <= aggreg:
        raise PlannerConfigurationError(
            f"smallest budget {smallest} must exceed the aggregate regret {aggreg}"
        )
    return float(aggreg) / smallest

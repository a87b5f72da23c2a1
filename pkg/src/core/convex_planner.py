"""
Concave-reward / convex-constraint planning over occupancy measures.

The program maximizes ``F(rho) = max_{t in [lo, hi]} f(t)`` where ``lo`` and
``hi`` are the totals of ``r_hat -/+ b`` under ``rho``, subject to
``G(rho) = min_{v in box} g(v) <= 0`` where the box spans the totals of
``c_hat -/+ b``. A dual loop on a multiplier for ``G`` wraps a Frank-Wolfe
inner loop whose linear oracle is value iteration. A fully-corrective
master problem over the collected vertex policies polishes the result.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from src.core.cmdp import MixturePolicy, Policy, StructuralError, occupancy_from_policy
from src.core.estimation import BonusEnhancedModel
from src.core.planners import (
    PlannerConfigurationError,
    PlannerInfeasibleError,
    PlannerSolution,
    solution_from_policy,
    value_iteration,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

DERIVATIVE_STEP = 1e-6
INTERVAL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ConvexSpec:
    """
    ``f`` maps the total reward to a utility (concave); ``g`` maps the total
    consumption vector to a constraint value (convex), feasible when ``<= 0``.
    ``g`` is None when the program has no constraint.
    """

    f: Callable[[float], float]
    g: Optional[Callable[[np.ndarray], float]] = None
    lipschitz: float = 1.0
    f_derivative: Optional[Callable[[float], float]] = None
    g_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.lipschitz > 0:
            raise PlannerConfigurationError(f"Lipschitz constant must be positive, got {self.lipschitz}")

    def df(self, t: float) -> float:
        if self.f_derivative is not None:
            return float(self.f_derivative(t))
        e = DERIVATIVE_STEP
        return (self.f(t + e) - self.f(t - e)) / (2.0 * e)

    def dg(self, v: np.ndarray) -> np.ndarray:
        if self.g_gradient is not None:
            return np.asarray(self.g_gradient(v), dtype=float)
        grad = np.zeros(v.size)
        e = DERIVATIVE_STEP
        for i in range(v.size):
            step = np.zeros(v.size)
            step[i] = e
            grad[i] = (self.g(v + step) - self.g(v - step)) / (2.0 * e)
        return grad


@dataclass(frozen=True)
class ConvexConfig:
    outer_iterations: int = 100
    inner_iterations: int = 30
    dual_step: float = 1.0
    feasibility_tolerance: float = 1e-6
    polish: bool = True

    def __post_init__(self):
        if self.outer_iterations < 1 or self.inner_iterations < 1:
            raise PlannerConfigurationError("iteration counts must be >= 1")
        if not self.dual_step > 0:
            raise PlannerConfigurationError("dual_step must be positive")


def linear_objective() -> Callable[[float], float]:
    return lambda t: float(t)


def capped_objective(cap: float) -> Callable[[float], float]:
    return lambda t: float(min(t, cap))


def log_objective() -> Callable[[float], float]:
    return lambda t: float(math.log1p(max(t, -0.999999)))


def budget_constraint(budgets: Sequence[float]) -> Callable[[np.ndarray], float]:
    xi = np.asarray(budgets, dtype=float)
    return lambda v: float(np.max(np.asarray(v) - xi))


def ball_constraint(target: Sequence[float], radius: float) -> Callable[[np.ndarray], float]:
    center = np.asarray(target, dtype=float)
    return lambda v: float(np.max(np.abs(np.asarray(v) - center)) - radius)


OBJECTIVES = ("linear", "capped", "log")
CONSTRAINTS = ("none", "budget", "ball")


def build_convex_spec(
    objective: str = "linear",
    constraint: str = "budget",
    budgets: Optional[Sequence[float]] = None,
    cap: Optional[float] = None,
    target: Optional[Sequence[float]] = None,
    radius: float = 0.0,
) -> ConvexSpec:
    """
    Named objective/constraint pairs for configuration-driven runs.

    Raises:
        PlannerConfigurationError: for unknown names or missing parameters
    """
    if objective == "linear":
        f = linear_objective()
    elif objective == "capped":
        if cap is None:
            raise PlannerConfigurationError("capped objective needs 'cap'")
        f = capped_objective(float(cap))
    elif objective == "log":
        f = log_objective()
    else:
        raise PlannerConfigurationError(f"Unknown convex objective: {objective}")

    if constraint == "none":
        g = None
    elif constraint == "budget":
        if budgets is None:
            raise PlannerConfigurationError("budget constraint needs budgets")
        g = budget_constraint(budgets)
    elif constraint == "ball":
        if target is None:
            raise PlannerConfigurationError("ball constraint needs 'target'")
        if radius < 0:
            raise PlannerConfigurationError("ball radius must be nonnegative")
        g = ball_constraint(target, radius)
    else:
        raise PlannerConfigurationError(f"Unknown convex constraint: {constraint}")
    return ConvexSpec(f=f, g=g, lipschitz=1.0, name=f"{objective}/{constraint}")


def maximize_over_interval(f: Callable[[float], float], lo: float, hi: float) -> Tuple[float, float]:
    """Return ``(max f, argmax)`` over ``[lo, hi]``, endpoints included."""
    if hi - lo <= INTERVAL_TOLERANCE:
        return f(hi), hi
    candidates = [lo, hi]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = minimize_scalar(
            lambda t: -f(t), bounds=(lo, hi), method="bounded", options={"xatol": INTERVAL_TOLERANCE}
        )
    candidates.append(float(np.clip(result.x, lo, hi)))
    best = max(candidates, key=f)
    return f(best), best


def minimize_over_box(
    g: Callable[[np.ndarray], float],
    lo: np.ndarray,
    hi: np.ndarray,
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[float, np.ndarray]:
    """Return ``(min g, argmin)`` over the box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    candidates = [lo, hi, 0.5 * (lo + hi)]
    if np.any(hi - lo > INTERVAL_TOLERANCE):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = minimize(
                g,
                x0=0.5 * (lo + hi),
                jac=gradient,
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
            )
        candidates.append(np.clip(result.x, lo, hi))
    best = min(candidates, key=g)
    return g(best), best


@dataclass
class _Vertex:
    policy: Policy
    rho: np.ndarray
    # totals of r_hat - b, r_hat + b, c_hat - b, c_hat + b under this vertex
    reward_lo: float
    reward_hi: float
    cons_lo: np.ndarray
    cons_hi: np.ndarray


@dataclass
class _Problem:
    """Planning tables plus the vertex policies collected so far."""

    spec: ConvexSpec
    p: np.ndarray
    r_lo: np.ndarray
    r_hi: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray
    s0: int
    H: int
    vertices: List[_Vertex] = field(default_factory=list)
    index: Dict[bytes, int] = field(default_factory=dict)

    def add_vertex(self, policy: Policy) -> int:
        key = policy.table.tobytes()
        if key in self.index:
            return self.index[key]
        rho = occupancy_from_policy(self.p, policy, self.s0, self.H).rho
        mass = rho.sum(axis=2)
        self.vertices.append(
            _Vertex(
                policy=policy,
                rho=rho,
                reward_lo=float(np.sum(mass * self.r_lo)),
                reward_hi=float(np.sum(mass * self.r_hi)),
                cons_lo=np.einsum("sa,sai->i", mass, self.c_lo),
                cons_hi=np.einsum("sa,sai->i", mass, self.c_hi),
            )
        )
        self.index[key] = len(self.vertices) - 1
        return self.index[key]

    def aggregates(self, weights: np.ndarray):
        vs = self.vertices[: weights.size]
        lo = float(sum(w * v.reward_lo for w, v in zip(weights, vs)))
        hi = float(sum(w * v.reward_hi for w, v in zip(weights, vs)))
        clo = sum(w * v.cons_lo for w, v in zip(weights, vs))
        chi = sum(w * v.cons_hi for w, v in zip(weights, vs))
        return lo, hi, np.atleast_1d(clo), np.atleast_1d(chi)

    def F(self, weights: np.ndarray) -> Tuple[float, float]:
        lo, hi, _, _ = self.aggregates(weights)
        return maximize_over_interval(self.spec.f, lo, hi)

    def G(self, weights: np.ndarray) -> Tuple[float, np.ndarray]:
        if self.spec.g is None:
            return -math.inf, np.zeros(0)
        _, _, clo, chi = self.aggregates(weights)
        return minimize_over_box(self.spec.g, clo, chi, self.spec.g_gradient)

    def gradient_table(self, weights: np.ndarray, lam: float) -> np.ndarray:
        """(S, A) linearization of ``F - lam * G`` at the current mixture."""
        lo, hi, clo, chi = self.aggregates(weights)
        _, t_star = maximize_over_interval(self.spec.f, lo, hi)
        slope = self.spec.df(t_star)
        table = np.zeros_like(self.r_hi)
        at_hi = abs(t_star - hi) <= INTERVAL_TOLERANCE
        at_lo = abs(t_star - lo) <= INTERVAL_TOLERANCE
        if at_hi and slope > 0:
            table = table + slope * self.r_hi
        elif at_lo and slope < 0:
            table = table + slope * self.r_lo
        if self.spec.g is not None and lam > 0:
            _, v_star = minimize_over_box(self.spec.g, clo, chi, self.spec.g_gradient)
            grad = self.spec.dg(v_star)
            coef_lo = np.where(np.abs(v_star - clo) <= INTERVAL_TOLERANCE, np.maximum(grad, 0.0), 0.0)
            coef_hi = np.where(np.abs(v_star - chi) <= INTERVAL_TOLERANCE, np.minimum(grad, 0.0), 0.0)
            table = table - lam * (
                np.einsum("sai,i->sa", self.c_lo, coef_lo) + np.einsum("sai,i->sa", self.c_hi, coef_hi)
            )
        return table


def _frank_wolfe(problem: _Problem, lam: float, iterations: int, weights: np.ndarray) -> np.ndarray:
    for t in range(iterations):
        direction = problem.gradient_table(weights, lam) if weights.size else problem.r_hi
        _, vertex_policy = value_iteration(problem.p, direction, problem.H)
        j = problem.add_vertex(vertex_policy)
        gamma = 2.0 / (t + 2.0)
        grown = np.zeros(len(problem.vertices))
        grown[: weights.size] = (1.0 - gamma) * weights
        grown[j] += gamma
        weights = grown
    return weights


def _polish(problem: _Problem, start: np.ndarray, tolerance: float) -> Optional[np.ndarray]:
    """Fully-corrective master problem over all collected vertices."""
    J = len(problem.vertices)
    x0 = np.zeros(J)
    x0[: start.size] = start
    constraints = [{"type": "eq", "fun": lambda w: np.sum(w) - 1.0}]
    if problem.spec.g is not None:
        constraints.append({"type": "ineq", "fun": lambda w: -problem.G(_renormalized(w))[0]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = minimize(
            lambda w: -problem.F(_renormalized(w))[0],
            x0=x0,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * J,
            constraints=constraints,
            options={"ftol": 1e-12, "maxiter": 500},
        )
    weights = _renormalized(result.x)
    if problem.G(weights)[0] > tolerance:
        return None
    return weights


def _renormalized(w: np.ndarray) -> np.ndarray:
    w = np.clip(np.asarray(w, dtype=float), 0.0, None)
    total = w.sum()
    if total <= 0:
        return np.full(w.size, 1.0 / w.size)
    return w / total


def convex_conplanner(
    model: BonusEnhancedModel,
    spec: ConvexSpec,
    s0: int,
    H: int,
    cfg: ConvexConfig = ConvexConfig(),
) -> PlannerSolution:
    """
    Plan for a concave utility of the reward under a convex consumption constraint.

    Returns the best feasible mixture found. ``info`` carries the achieved
    ``objective`` F and ``constraint`` G.

    Raises:
        PlannerInfeasibleError: if no iterate satisfies ``G <= feasibility_tolerance``
    """
    if model.r_hat.shape != model.p.shape[:2]:
        raise StructuralError("model tables have mismatching dimensions")
    bonus = model.bonus
    problem = _Problem(
        spec=spec,
        p=model.p,
        r_lo=model.r_hat - bonus,
        r_hi=model.r_hat + bonus,
        c_lo=model.c_hat - bonus[:, :, None],
        c_hi=model.c_hat + bonus[:, :, None],
        s0=s0,
        H=H,
    )

    lam = 0.0
    weights = np.zeros(0)
    best_weights, best_value = None, -math.inf
    outer = cfg.outer_iterations if spec.g is not None else 1
    for j in range(outer):
        weights = _frank_wolfe(problem, lam, cfg.inner_iterations, np.zeros(0))
        value, _ = problem.F(weights)
        violation, _ = problem.G(weights)
        if violation <= cfg.feasibility_tolerance and value > best_value:
            best_weights, best_value = weights.copy(), value
        if spec.g is not None:
            lam = max(0.0, lam + cfg.dual_step / math.sqrt(j + 1.0) * violation)
        logger.debug(
            f"Convex dual iteration {j}: F={value:.6f}, G={violation:.3e}, "
            f"lambda={lam:.6f}, vertices={len(problem.vertices)}"
        )

    if cfg.polish:
        start = best_weights if best_weights is not None else weights
        polished = _polish(problem, start, cfg.feasibility_tolerance)
        if polished is not None:
            value, _ = problem.F(polished)
            if value > best_value:
                best_weights, best_value = polished, value

    if best_weights is None:
        raise PlannerInfeasibleError(
            f"no feasible iterate after {outer} dual iterations ({spec.name})"
        )

    keep = np.flatnonzero(best_weights > 1e-12)
    mixture = MixturePolicy(
        best_weights[keep] / best_weights[keep].sum(),
        tuple(problem.vertices[i].policy for i in keep),
    )
    final = np.zeros(len(problem.vertices))
    final[keep] = mixture.weights
    objective, _ = problem.F(final)
    constraint, _ = problem.G(final)
    solution = solution_from_policy(mixture, model.p, model.r_plus, model.c_minus, s0, H)
    solution.info.update(
        {
            "objective": objective,
            "constraint": constraint,
            "multiplier": lam,
            "vertices": len(problem.vertices),
            "spec": spec.name,
        }
    )
    return solution

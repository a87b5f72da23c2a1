"""
Brute-force and exact-arithmetic reference implementations.

These back the equivalence tests of the floating-point solvers and can be
called directly to regenerate reference constants. Every entry point
enforces a size guard and raises OracleSizeError instead of running for
hours.
"""

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.cmdp import Cmdp, ObjectiveSelector, Policy
from src.core.planners import build_occupancy_lp
from src.core.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAX_EXACT_VARIABLES = 60
MAX_EXACT_ROWS = 60
MAX_ENUMERATION = 10**6


class OracleSizeError(Exception):
    """The instance exceeds the size an oracle is willing to handle."""

    pass


def _fractions(values) -> Tuple[Fraction, ...]:
    return tuple(Fraction(v) if not isinstance(v, Fraction) else v for v in values)


@dataclass(frozen=True)
class RationalLp:
    """
    ``maximize objective . x`` subject to equality rows, ``<=`` rows and
    ``lower <= x <= upper`` (``upper`` entries may be None), over exact rationals.
    """

    objective: Tuple[Fraction, ...]
    equality_rows: Tuple[Tuple[Tuple[Fraction, ...], Fraction], ...] = ()
    inequality_rows: Tuple[Tuple[Tuple[Fraction, ...], Fraction], ...] = ()
    lower: Optional[Tuple[Fraction, ...]] = None
    upper: Optional[Tuple[Optional[Fraction], ...]] = None

    def __post_init__(self):
        objective = _fractions(self.objective)
        n = len(objective)
        eq = tuple((_fractions(row), Fraction(rhs)) for row, rhs in self.equality_rows)
        ub = tuple((_fractions(row), Fraction(rhs)) for row, rhs in self.inequality_rows)
        if any(len(row) != n for row, _ in eq + ub):
            raise ValueError(f"every row must have {n} coefficients")
        lower = _fractions(self.lower) if self.lower is not None else (Fraction(0),) * n
        upper = (
            tuple(None if u is None else Fraction(u) for u in self.upper)
            if self.upper is not None
            else (None,) * n
        )
        if len(lower) != n or len(upper) != n:
            raise ValueError("bounds must have one entry per variable")
        if any(lo < 0 for lo in lower):
            raise ValueError("lower bounds must be nonnegative")
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "equality_rows", eq)
        object.__setattr__(self, "inequality_rows", ub)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def num_variables(self) -> int:
        return len(self.objective)

    @classmethod
    def from_problem(cls, problem: LpProblem) -> "RationalLp":
        """Exact rational image of a floating-point program (binary floats convert exactly)."""
        eq, ub = problem.dense()
        return cls(
            objective=problem.objective.tolist(),
            equality_rows=[(row.tolist(), rhs) for row, rhs in zip(eq, problem.eq_rhs.tolist())],
            inequality_rows=[(row.tolist(), rhs) for row, rhs in zip(ub, problem.ub_rhs.tolist())],
            lower=problem.bounds[:, 0].tolist(),
            upper=[None if not np.isfinite(u) else u for u in problem.bounds[:, 1].tolist()],
        )


@dataclass(frozen=True)
class ExactLpResult:
    status: str
    value: Optional[Fraction] = None
    values: Optional[Tuple[Fraction, ...]] = None


class _ExactTableau:
    def __init__(self, rows: List[List[Fraction]], rhs: List[Fraction], basis: List[int]):
        self.T = [list(row) + [b] for row, b in zip(rows, rhs)]
        self.basis = list(basis)
        self.objective: List[Fraction] = []

    def set_objective(self, c: Sequence[Fraction]) -> None:
        row = list(c) + [Fraction(0)]
        for i, j in enumerate(self.basis):
            coef = row[j]
            if coef != 0:
                row = [x - coef * y for x, y in zip(row, self.T[i])]
        self.objective = row

    def pivot(self, i: int, j: int) -> None:
        piv = self.T[i][j]
        self.T[i] = [x / piv for x in self.T[i]]
        for k, row in enumerate(self.T):
            if k != i and row[j] != 0:
                f = row[j]
                self.T[k] = [x - f * y for x, y in zip(row, self.T[i])]
        f = self.objective[j]
        if f != 0:
            self.objective = [x - f * y for x, y in zip(self.objective, self.T[i])]
        self.basis[i] = j

    def run(self) -> str:
        while True:
            entering = next((j for j, v in enumerate(self.objective[:-1]) if v > 0), None)
            if entering is None:
                return OPTIMAL
            best = None
            for i, row in enumerate(self.T):
                if row[entering] > 0:
                    ratio = row[-1] / row[entering]
                    key = (ratio, self.basis[i])
                    if best is None or key < best[0]:
                        best = (key, i)
            if best is None:
                return UNBOUNDED
            self.pivot(best[1], entering)


def solve_lp_exact(problem: RationalLp) -> ExactLpResult:
    """
    Two-phase tableau simplex over exact rationals with Bland's rule.

    Raises:
        OracleSizeError: beyond 60 variables or 60 rows
    """
    n = problem.num_variables
    rows_total = len(problem.equality_rows) + len(problem.inequality_rows)
    if n > MAX_EXACT_VARIABLES or rows_total > MAX_EXACT_ROWS:
        raise OracleSizeError(
            f"exact LP limited to {MAX_EXACT_VARIABLES} variables and {MAX_EXACT_ROWS} rows, "
            f"got {n} and {rows_total}"
        )
    lower = problem.lower

    def shifted(row, rhs):
        return list(row), rhs - sum(a * lo for a, lo in zip(row, lower))

    eq = [shifted(row, rhs) for row, rhs in problem.equality_rows]
    ub = [shifted(row, rhs) for row, rhs in problem.inequality_rows]
    for j, u in enumerate(problem.upper):
        if u is not None:
            unit = [Fraction(0)] * n
            unit[j] = Fraction(1)
            ub.append((unit, u - lower[j]))

    m_eq, m_ub = len(eq), len(ub)
    total = n + m_ub
    zero = Fraction(0)
    rows, rhs = [], []
    for i, (row, b) in enumerate(eq + ub):
        full = row + [zero] * m_ub
        if i >= m_eq:
            full[n + i - m_eq] = Fraction(1)
        if b < 0:
            full = [-x for x in full]
            b = -b
            needs_artificial = True
        else:
            needs_artificial = i < m_eq
        rows.append((full, needs_artificial))
        rhs.append(b)

    artificials = [i for i, (_, flag) in enumerate(rows) if flag]
    width = total + len(artificials)
    matrix, basis = [], []
    for i, (full, flag) in enumerate(rows):
        extended = full + [zero] * len(artificials)
        if flag:
            column = total + artificials.index(i)
            extended[column] = Fraction(1)
            basis.append(column)
        else:
            basis.append(n + i - m_eq)
        matrix.append(extended)

    tableau = _ExactTableau(matrix, rhs, basis)
    if artificials:
        phase_one = [zero] * total + [Fraction(-1)] * len(artificials)
        tableau.set_objective(phase_one)
        tableau.run()
        if tableau.objective[-1] != 0:
            return ExactLpResult(status=INFEASIBLE)
        artificial_columns = set(range(total, width))
        i = 0
        while i < len(tableau.T):
            if tableau.basis[i] in artificial_columns:
                column = next((j for j in range(total) if tableau.T[i][j] != 0), None)
                if column is None:
                    del tableau.T[i]
                    del tableau.basis[i]
                    continue
                tableau.pivot(i, column)
            i += 1
        tableau.T = [row[:total] + [row[-1]] for row in tableau.T]

    tableau.set_objective(list(problem.objective) + [zero] * m_ub)
    if tableau.run() == UNBOUNDED:
        return ExactLpResult(status=UNBOUNDED)

    x = [zero] * total
    for i, j in enumerate(tableau.basis):
        x[j] = tableau.T[i][-1]
    values = tuple(x[j] + lower[j] for j in range(n))
    value = sum((c * v for c, v in zip(problem.objective, values)), zero)
    return ExactLpResult(status=OPTIMAL, value=value, values=values)


@dataclass(frozen=True)
class EnumeratedPolicy:
    """A deterministic policy with its exact expected reward and consumption totals."""

    policy: Policy
    reward: Fraction
    consumption: Tuple[Fraction, ...]


def _exact_tables(cmdp: Cmdp):
    S, A, d = cmdp.num_states, cmdp.num_actions, cmdp.num_resources
    p = [[[Fraction(float(cmdp.transitions[s, a, t])) for t in range(S)] for a in range(A)] for s in range(S)]
    r = [[Fraction(float(cmdp.rewards[s, a])) for a in range(A)] for s in range(S)]
    c = [[[Fraction(float(cmdp.consumption[s, a, i])) for i in range(d)] for a in range(A)] for s in range(S)]
    return p, r, c


def enumerate_policies(cmdp: Cmdp, H: Optional[int] = None) -> List[EnumeratedPolicy]:
    """
    Every deterministic time-dependent policy with exact totals.

    Raises:
        OracleSizeError: if A^(S*H) exceeds 10^6
    """
    H = cmdp.horizon if H is None else H
    S, A, d = cmdp.num_states, cmdp.num_actions, cmdp.num_resources
    if A ** (S * H) > MAX_ENUMERATION:
        raise OracleSizeError(f"A^(S*H) = {A}^{S * H} policies exceeds {MAX_ENUMERATION}")
    p, r, c = _exact_tables(cmdp)
    s0 = cmdp.initial_state
    results = []
    for choice in itertools.product(range(A), repeat=S * H):
        actions = np.array(choice, dtype=int).reshape(H, S)
        dist = [Fraction(0)] * S
        dist[s0] = Fraction(1)
        reward = Fraction(0)
        consumption = [Fraction(0)] * d
        for h in range(H):
            following = [Fraction(0)] * S
            for s in range(S):
                if dist[s] == 0:
                    continue
                a = int(actions[h, s])
                reward += dist[s] * r[s][a]
                for i in range(d):
                    consumption[i] += dist[s] * c[s][a][i]
                for t in range(S):
                    following[t] += dist[s] * p[s][a][t]
            dist = following
        results.append(
            EnumeratedPolicy(
                policy=Policy.deterministic(actions, A),
                reward=reward,
                consumption=tuple(consumption),
            )
        )
    logger.debug(f"Enumerated {len(results)} deterministic policies")
    return results


def exact_trajectory_expectation(
    cmdp: Cmdp, policy: Policy, objective: ObjectiveSelector = ObjectiveSelector.reward()
) -> float:
    """
    Expected total of an objective by summing over every length-H path.

    Raises:
        OracleSizeError: if (S*A)^H exceeds 10^6
    """
    S, A, H = cmdp.num_states, cmdp.num_actions, cmdp.horizon
    if (S * A) ** H > MAX_ENUMERATION:
        raise OracleSizeError(f"(S*A)^H = {S * A}^{H} paths exceeds {MAX_ENUMERATION}")
    m = cmdp.objective(objective)
    table = [[Fraction(float(m[s, a])) for a in range(A)] for s in range(S)]
    p, _, _ = _exact_tables(cmdp)
    pi = [
        [[Fraction(float(policy.table[h, s, a])) for a in range(A)] for s in range(S)]
        for h in range(H)
    ]

    total = Fraction(0)
    for path in itertools.product(range(A * S), repeat=H):
        weight = Fraction(1)
        value = Fraction(0)
        s = cmdp.initial_state
        for h, step in enumerate(path):
            a, following = divmod(step, S)
            weight *= pi[h][s][a] * p[s][a][following]
            if weight == 0:
                break
            value += table[s][a]
            s = following
        total += weight * value
    return float(total)


def exact_occupancy_optimum(
    cmdp: Cmdp, budgets: Optional[Sequence[float]] = None
) -> ExactLpResult:
    """Exact optimum of the occupancy program of the true cMDP (zero bonus)."""
    xi = cmdp.budgets if budgets is None else np.asarray(budgets, dtype=float)
    problem = build_occupancy_lp(
        cmdp.transitions, cmdp.rewards, cmdp.consumption, xi, cmdp.initial_state, cmdp.horizon
    )
    return solve_lp_exact(RationalLp.from_problem(problem))

"""Linear programming: a bundled two-phase primal simplex and a HiGHS backend."""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from src.core.cmdp import StructuralError
from src.utils.logger import get_logger

logger = get_logger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

PIVOT_TOLERANCE = 1e-12
FEASIBILITY_TOLERANCE = 1e-9
BACKENDS = ("auto", "simplex", "highs")
DEFAULT_SIMPLEX_MAX_VARIABLES = 1500


class SolverError(Exception):
    """The solver stalled, ran out of iterations, or its backend failed."""

    pass


def _as_matrix(rows, n: int):
    if rows is None:
        return np.zeros((0, n))
    if sparse.issparse(rows):
        return rows.tocsr()
    matrix = np.asarray(rows, dtype=float)
    if matrix.size == 0:
        return np.zeros((0, n))
    return np.atleast_2d(matrix)


@dataclass(eq=False)
class LpProblem:
    """
    maximize ``objective . x`` subject to

    - ``eq_matrix @ x == eq_rhs``
    - ``ub_matrix @ x <= ub_rhs``
    - ``bounds[:, 0] <= x <= bounds[:, 1]`` with ``bounds[:, 0] >= 0``

    Matrices may be dense arrays or ``scipy.sparse`` matrices.
    """

    objective: np.ndarray
    eq_matrix: Optional[object] = None
    eq_rhs: Optional[np.ndarray] = None
    ub_matrix: Optional[object] = None
    ub_rhs: Optional[np.ndarray] = None
    bounds: Optional[np.ndarray] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.objective.size
        self.eq_matrix = _as_matrix(self.eq_matrix, n)
        self.ub_matrix = _as_matrix(self.ub_matrix, n)
        self.eq_rhs = np.asarray(self.eq_rhs if self.eq_rhs is not None else [], dtype=float).reshape(-1)
        self.ub_rhs = np.asarray(self.ub_rhs if self.ub_rhs is not None else [], dtype=float).reshape(-1)
        if self.bounds is None:
            self.bounds = np.column_stack([np.zeros(n), np.full(n, np.inf)])
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(n, 2)

        if self.eq_matrix.shape != (self.eq_rhs.size, n):
            raise StructuralError(
                f"equality block {self.eq_matrix.shape} inconsistent with {self.eq_rhs.size} rows, {n} variables"
            )
        if self.ub_matrix.shape != (self.ub_rhs.size, n):
            raise StructuralError(
                f"inequality block {self.ub_matrix.shape} inconsistent with {self.ub_rhs.size} rows, {n} variables"
            )
        if np.any(self.bounds[:, 0] < 0) or np.any(~np.isfinite(self.bounds[:, 0])):
            raise StructuralError("variable lower bounds must be finite and nonnegative")
        if np.any(self.bounds[:, 1] < self.bounds[:, 0]):
            raise StructuralError("variable upper bound below lower bound")

    @property
    def num_variables(self) -> int:
        return self.objective.size

    @classmethod
    def from_rows(
        cls,
        objective,
        equality_rows: List[Tuple[List[float], float]] = (),
        inequality_rows: List[Tuple[List[float], float]] = (),
        bounds=None,
    ) -> "LpProblem":
        """Build from (coefficients, rhs) row lists."""
        n = len(objective)
        eq = [row for row, _ in equality_rows]
        ub = [row for row, _ in inequality_rows]
        return cls(
            objective=objective,
            eq_matrix=np.array(eq, dtype=float).reshape(-1, n),
            eq_rhs=[rhs for _, rhs in equality_rows],
            ub_matrix=np.array(ub, dtype=float).reshape(-1, n),
            ub_rhs=[rhs for _, rhs in inequality_rows],
            bounds=bounds,
        )

    def dense(self) -> Tuple[np.ndarray, np.ndarray]:
        eq = self.eq_matrix.toarray() if sparse.issparse(self.eq_matrix) else self.eq_matrix
        ub = self.ub_matrix.toarray() if sparse.issparse(self.ub_matrix) else self.ub_matrix
        return np.asarray(eq, dtype=float), np.asarray(ub, dtype=float)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of a candidate point."""
        worst = 0.0
        if self.eq_rhs.size:
            worst = max(worst, float(np.max(np.abs(self.eq_matrix @ x - self.eq_rhs))))
        if self.ub_rhs.size:
            worst = max(worst, float(np.max(self.ub_matrix @ x - self.ub_rhs, initial=0.0)))
        worst = max(worst, float(np.max(self.bounds[:, 0] - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.bounds[:, 1], initial=0.0)))
        return worst


@dataclass(eq=False)
class LpSolution:
    status: str
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_value: float = float("nan")
    iterations: int = 0
    backend: str = "simplex"

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    """Dense simplex tableau for ``max c.x, T[:m, :n] x = T[:m, -1], x >= 0``."""

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: List[int], max_iterations: int):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, -1] = b
        self.basis = list(basis)
        self.max_iterations = max_iterations
        self.iterations = 0

    @property
    def num_rows(self) -> int:
        return self.T.shape[0] - 1

    def set_objective(self, c: np.ndarray) -> None:
        """Load ``c`` and price out the current basis, leaving reduced costs in the last row."""
        n = self.T.shape[1] - 1
        row = np.zeros(n + 1)
        row[:n] = c
        for i, j in enumerate(self.basis):
            if row[j] != 0.0:
                row -= row[j] * self.T[i]
        self.T[-1] = row

    def pivot(self, i: int, j: int) -> None:
        T = self.T
        T[i] /= T[i, j]
        column = T[:, j].copy()
        column[i] = 0.0
        T -= np.outer(column, T[i])
        self.basis[i] = j

    def run(self) -> str:
        """Primal simplex iterations with Bland's rule."""
        T = self.T
        while True:
            reduced = T[-1, :-1]
            candidates = np.flatnonzero(reduced > FEASIBILITY_TOLERANCE)
            if candidates.size == 0:
                return OPTIMAL
            j = int(candidates[0])
            column = T[:-1, j]
            rows = np.flatnonzero(column > PIVOT_TOLERANCE)
            if rows.size == 0:
                return UNBOUNDED
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            tied = rows[ratios <= best + FEASIBILITY_TOLERANCE * max(1.0, abs(best))]
            i = int(min(tied, key=lambda r: self.basis[r]))
            self.pivot(i, j)
            self.iterations += 1
            if self.iterations > self.max_iterations:
                raise SolverError(
                    f"simplex did not terminate within {self.max_iterations} pivots"
                )

    def drop_row(self, i: int) -> None:
        self.T = np.delete(self.T, i, axis=0)
        del self.basis[i]

    def drop_columns(self, columns: List[int]) -> None:
        keep = [j for j in range(self.T.shape[1] - 1) if j not in set(columns)]
        remap = {old: new for new, old in enumerate(keep)}
        self.T = self.T[:, keep + [self.T.shape[1] - 1]]
        self.basis = [remap[j] for j in self.basis]

    def primal(self, n: int) -> np.ndarray:
        x = np.zeros(self.T.shape[1] - 1)
        for i, j in enumerate(self.basis):
            x[j] = self.T[i, -1]
        return x[:n]


def _standard_form(problem: LpProblem):
    """
    Shift lower bounds to zero and turn upper bounds into inequality rows.

    Returns ``(A, b, slack_columns, n, shift)`` for ``A x' = b`` with slack
    columns appended for every inequality row.
    """
    lower, upper = problem.bounds[:, 0], problem.bounds[:, 1]
    n = problem.num_variables
    eq, ub = problem.dense()
    eq_rhs = problem.eq_rhs - (eq @ lower if eq.size else 0.0)
    ub_rhs = problem.ub_rhs - (ub @ lower if ub.size else 0.0)

    finite = np.flatnonzero(np.isfinite(upper))
    bound_rows = np.zeros((finite.size, n))
    bound_rows[np.arange(finite.size), finite] = 1.0
    ub_all = np.vstack([ub.reshape(-1, n), bound_rows])
    ub_rhs_all = np.concatenate([np.atleast_1d(ub_rhs), upper[finite] - lower[finite]])

    m_eq, m_ub = eq.shape[0], ub_all.shape[0]
    A = np.zeros((m_eq + m_ub, n + m_ub))
    A[:m_eq, :n] = eq
    A[m_eq:, :n] = ub_all
    A[m_eq:, n:] = np.eye(m_ub)
    b = np.concatenate([np.atleast_1d(eq_rhs), ub_rhs_all])
    return A, b, m_eq, n, lower


def _solve_simplex(problem: LpProblem, max_iterations: Optional[int]) -> LpSolution:
    A, b, m_eq, n, lower = _standard_form(problem)
    m, total = A.shape
    if max_iterations is None:
        max_iterations = 50 * (m + total) + 1000

    # Rows with a negative right-hand side are negated; an inequality row whose
    # slack then carries -1 needs an artificial variable like an equality row.
    negative = b < 0
    A[negative] *= -1.0
    b = np.abs(b)
    needs_artificial = [i for i in range(m) if i < m_eq or negative[i]]
    basis = []
    artificial_columns = []
    A_full = np.hstack([A, np.zeros((m, len(needs_artificial)))])
    for k, i in enumerate(needs_artificial):
        A_full[i, total + k] = 1.0
        artificial_columns.append(total + k)
    artificial_of_row = dict(zip(needs_artificial, artificial_columns))
    for i in range(m):
        basis.append(artificial_of_row[i] if i in artificial_of_row else n + (i - m_eq))

    tableau = _Tableau(A_full, b, basis, max_iterations)

    if artificial_columns:
        phase_one = np.zeros(A_full.shape[1])
        phase_one[artificial_columns] = -1.0
        tableau.set_objective(phase_one)
        status = tableau.run()
        infeasibility = tableau.T[-1, -1]  # equals +sum(artificials)
        logger.debug(
            f"Phase 1 finished with status={status}, residual={infeasibility:.3e}, "
            f"pivots={tableau.iterations}"
        )
        if infeasibility > FEASIBILITY_TOLERANCE * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpSolution(status=INFEASIBLE, iterations=tableau.iterations)

        # Drive artificials out of the basis; rows where that is impossible are redundant
        artificial_set = set(artificial_columns)
        i = 0
        while i < tableau.num_rows:
            if tableau.basis[i] in artificial_set:
                row = tableau.T[i, :total]
                candidates = np.flatnonzero(np.abs(row) > PIVOT_TOLERANCE * 1e3)
                if candidates.size:
                    tableau.pivot(i, int(candidates[0]))
                else:
                    tableau.drop_row(i)
                    continue
            i += 1
        tableau.drop_columns(artificial_columns)

    phase_two = np.zeros(total)
    phase_two[:n] = problem.objective
    tableau.set_objective(phase_two)
    status = tableau.run()
    logger.debug(f"Phase 2 finished with status={status}, pivots={tableau.iterations}")
    if status == UNBOUNDED:
        return LpSolution(status=UNBOUNDED, iterations=tableau.iterations)

    x = np.maximum(tableau.primal(n), 0.0) + lower
    return LpSolution(
        status=OPTIMAL,
        values=x,
        objective_value=float(problem.objective @ x),
        iterations=tableau.iterations,
        backend="simplex",
    )


def _solve_highs(problem: LpProblem) -> LpSolution:
    bounds = [
        (lo, None if not np.isfinite(hi) else hi) for lo, hi in problem.bounds
    ]
    result = linprog(
        c=-problem.objective,
        A_ub=problem.ub_matrix if problem.ub_rhs.size else None,
        b_ub=problem.ub_rhs if problem.ub_rhs.size else None,
        A_eq=problem.eq_matrix if problem.eq_rhs.size else None,
        b_eq=problem.eq_rhs if problem.eq_rhs.size else None,
        bounds=bounds,
        method="highs",
    )
    if result.status == 2:
        return LpSolution(status=INFEASIBLE, backend="highs")
    if result.status == 3:
        return LpSolution(status=UNBOUNDED, backend="highs")
    if result.status != 0:
        raise SolverError(f"HiGHS failed with status {result.status}: {result.message}")
    x = np.clip(np.asarray(result.x, dtype=float), problem.bounds[:, 0], problem.bounds[:, 1])
    return LpSolution(
        status=OPTIMAL,
        values=x,
        objective_value=float(problem.objective @ x),
        iterations=int(getattr(result, "nit", 0)),
        backend="highs",
    )


def solve_lp(
    problem: LpProblem,
    backend: str = "simplex",
    max_iterations: Optional[int] = None,
    simplex_max_variables: int = DEFAULT_SIMPLEX_MAX_VARIABLES,
) -> LpSolution:
    """
    Solve a maximization LP.

    Args:
        problem: the program
        backend: "simplex" (bundled two-phase simplex with Bland's rule),
            "highs" (SciPy HiGHS) or "auto" (simplex up to
            ``simplex_max_variables`` variables, HiGHS above)
        max_iterations: pivot budget for the bundled simplex

    Returns:
        LpSolution; infeasible and unbounded programs are statuses, not errors

    Raises:
        SolverError: on a numerical stall or backend failure
    """
    if backend not in BACKENDS:
        raise ValueError(f"Unknown LP backend: {backend}")
    if backend == "auto":
        backend = "simplex" if problem.num_variables <= simplex_max_variables else "highs"
    if backend == "highs":
        return _solve_highs(problem)
    return _solve_simplex(problem, max_iterations)


@dataclass(frozen=True)
class SolverOptions:
    """LP backend selection shared by the occupancy-measure planners."""

    backend: str = "simplex"
    simplex_max_variables: int = DEFAULT_SIMPLEX_MAX_VARIABLES
    max_iterations: Optional[int] = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"Unknown LP backend: {self.backend}")
        if self.simplex_max_variables < 1:
            raise ValueError("simplex_max_variables must be positive")

    def solve(self, problem: LpProblem) -> LpSolution:
        return solve_lp(
            problem,
            backend=self.backend,
            max_iterations=self.max_iterations,
            simplex_max_variables=self.simplex_max_variables,
        )

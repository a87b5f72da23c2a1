"""Unit tests for the LP layer: bundled simplex and HiGHS backend."""

import numpy as np
import pytest

from src.core.cmdp import StructuralError
from src.core.simplex import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LpProblem,
    SolverError,
    SolverOptions,
    solve_lp,
)
from tests.fixtures.sample_data import get_sample_two_variable_lp


@pytest.fixture(params=["simplex", "highs"])
def backend(request):
    """Run a test against both backends."""
    return request.param


class TestSolveLp:
    """Test cases for solve_lp on small programs."""

    def test_two_variable_optimum(self, backend):
        """Test the textbook program reaches (1.6, 1.2) with value 2.8."""
        solution = solve_lp(get_sample_two_variable_lp(), backend=backend)
        assert solution.status == OPTIMAL
        assert solution.values == pytest.approx([1.6, 1.2], abs=1e-9)
        assert solution.objective_value == pytest.approx(2.8, abs=1e-9)
        assert solution.backend == backend

    def test_infeasible(self):
        """Test x <= 1 together with x >= 2 is reported infeasible."""
        problem = LpProblem.from_rows([1.0], inequality_rows=[([1.0], 1.0), ([-1.0], -2.0)])
        assert solve_lp(problem, backend="simplex").status == INFEASIBLE

    def test_infeasible_equalities(self):
        """Test contradictory equality rows are reported infeasible."""
        problem = LpProblem.from_rows(
            [1.0, 1.0], equality_rows=[([1.0, 1.0], 1.0), ([1.0, 1.0], 2.0)]
        )
        assert solve_lp(problem, backend="simplex").status == INFEASIBLE

    def test_unbounded(self):
        """Test maximizing an unconstrained variable is reported unbounded."""
        problem = LpProblem.from_rows([1.0, 0.0], inequality_rows=[([0.0, 1.0], 1.0)])
        assert solve_lp(problem, backend="simplex").status == UNBOUNDED

    def test_redundant_equalities(self, backend):
        """Test a duplicated equality row does not break the solve."""
        problem = LpProblem.from_rows(
            [1.0, 0.0],
            equality_rows=[([1.0, 1.0], 1.0), ([2.0, 2.0], 2.0)],
        )
        solution = solve_lp(problem, backend=backend)
        assert solution.status == OPTIMAL
        assert solution.values == pytest.approx([1.0, 0.0], abs=1e-9)

    def test_variable_bounds(self, backend):
        """Test lower and upper bounds are honoured."""
        problem = LpProblem.from_rows([-1.0, 1.0], bounds=[[0.5, 1.0], [0.0, 2.0]])
        solution = solve_lp(problem, backend=backend)
        assert solution.values == pytest.approx([0.5, 2.0], abs=1e-9)
        assert solution.objective_value == pytest.approx(1.5, abs=1e-9)

    def test_solution_satisfies_constraints(self, backend):
        """Test the returned point violates nothing beyond 1e-8."""
        problem = get_sample_two_variable_lp()
        solution = solve_lp(problem, backend=backend)
        assert problem.max_violation(solution.values) <= 1e-8


class TestBackendSelection:
    """Test cases for backend options."""

    def test_auto_uses_simplex_for_small_programs(self):
        """Test auto stays on the bundled simplex below the threshold."""
        solution = solve_lp(get_sample_two_variable_lp(), backend="auto")
        assert solution.backend == "simplex"

    def test_auto_switches_to_highs(self):
        """Test auto hands large programs to HiGHS."""
        solution = solve_lp(get_sample_two_variable_lp(), backend="auto", simplex_max_variables=1)
        assert solution.backend == "highs"

    def test_unknown_backend(self):
        """Test an unknown backend name raises ValueError."""
        with pytest.raises(ValueError):
            solve_lp(get_sample_two_variable_lp(), backend="glpk")

    def test_iteration_budget(self):
        """Test an exhausted pivot budget raises SolverError."""
        with pytest.raises(SolverError):
            solve_lp(get_sample_two_variable_lp(), backend="simplex", max_iterations=0)

    def test_solver_options_delegate(self):
        """Test SolverOptions.solve runs the configured backend."""
        solution = SolverOptions(backend="highs").solve(get_sample_two_variable_lp())
        assert solution.backend == "highs"
        assert solution.is_optimal


class TestLpProblem:
    """Test cases for problem validation."""

    def test_negative_lower_bound_rejected(self):
        """Test a negative lower bound raises StructuralError."""
        with pytest.raises(StructuralError):
            LpProblem.from_rows([1.0], bounds=[[-1.0, 1.0]])

    def test_row_length_mismatch(self):
        """Test an inequality block with the wrong width is rejected."""
        with pytest.raises(StructuralError):
            LpProblem(objective=[1.0, 1.0], ub_matrix=np.ones((1, 3)), ub_rhs=[1.0])

    def test_max_violation(self):
        """Test violations of rows and bounds are measured."""
        problem = get_sample_two_variable_lp()
        assert problem.max_violation(np.array([4.0, 0.0])) == pytest.approx(6.0)
        assert problem.max_violation(np.array([-0.5, 0.0])) == pytest.approx(0.5)

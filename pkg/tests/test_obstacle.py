"""Obstacle QP solvers against hand-solved cases and the enumeration oracle.

Frozen expectations below were worked out by hand from the componentwise
optimality conditions.  For A = tridiag(-1, 2, -1), psi = 0:

* b = (-3, 4, -1): node 0 is in contact.  The reduced system on {1, 2}
  gives u = (0, 7/3, 2/3) with multiplier (2/3, 0, 0) -- strict
  complementarity, a unique passing active set.
* b = (-1, 2, -1): the unconstrained minimiser is exactly (0, 1, 0), which
  touches the obstacle with zero multipliers; the four masks contained in
  {0, 2} all reproduce it, so the oracle reports 4 tied candidates.
"""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from unidiffusion.mesh import assemble_a_sigma, build_grid
from unidiffusion.obstacle import (
    ConvergenceError,
    ObstacleProblem,
    PreconditionError,
    ProblemTooLargeError,
    check_comparison,
    check_minorant,
    enumerate_oracle,
    kkt_residuals,
    solve_pdas,
    solve_psor,
    verify_conditions,
)

A3 = sp.csr_matrix(np.array([
    [2.0, -1.0, 0.0],
    [-1.0, 2.0, -1.0],
    [0.0, -1.0, 2.0],
]))


def tridiag_problem(b, psi=(0.0, 0.0, 0.0)):
    return ObstacleProblem(A3, np.asarray(b, dtype=float), np.asarray(psi, dtype=float))


def random_problem(rng, n, density=0.4, psi_shift=0.0):
    """A random SPD M-matrix problem (symmetric, strictly diagonally dominant)."""
    c = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(c, 0.0)
    c = 0.5 * (c + c.T)
    diag = c.sum(axis=1) + rng.random(n) + 0.5
    a = sp.csr_matrix(np.diag(diag) - c)
    b = rng.standard_normal(n)
    psi = rng.standard_normal(n) * 0.5 + psi_shift
    return ObstacleProblem(a, b, psi)


ALL_SOLVERS = [
    pytest.param(lambda p: solve_psor(p, tol=1e-12), id="psor"),
    pytest.param(lambda p: solve_pdas(p, tol=1e-12), id="pdas"),
    pytest.param(lambda p: enumerate_oracle(p), id="oracle"),
]


class TestFrozenCases:
    @pytest.mark.parametrize("solve", ALL_SOLVERS)
    def test_contact_at_node_zero(self, solve):
        problem = tridiag_problem([-3.0, 4.0, -1.0])
        solution = solve(problem)
        np.testing.assert_allclose(solution.u, [0.0, 7.0 / 3.0, 2.0 / 3.0],
                                   atol=1e-11)
        lam = problem.dual(solution.u)
        np.testing.assert_allclose(lam, [2.0 / 3.0, 0.0, 0.0], atol=1e-10)
        assert solution.active_set[0]
        assert not solution.active_set[1]

    def test_unique_oracle_candidate_when_nondegenerate(self):
        solution = enumerate_oracle(tridiag_problem([-3.0, 4.0, -1.0]))
        assert solution.oracle_candidates == 1
        assert solution.iterations == 8  # 2^3 masks examined

    @pytest.mark.parametrize("solve", ALL_SOLVERS)
    def test_degenerate_touching(self, solve):
        problem = tridiag_problem([-1.0, 2.0, -1.0])
        solution = solve(problem)
        np.testing.assert_allclose(solution.u, [0.0, 1.0, 0.0], atol=1e-11)

    def test_degenerate_candidate_count(self):
        solution = enumerate_oracle(tridiag_problem([-1.0, 2.0, -1.0]))
        assert solution.oracle_candidates == 4

    @pytest.mark.parametrize("solve", ALL_SOLVERS)
    def test_single_unknown_inactive(self, solve):
        problem = ObstacleProblem(sp.csr_matrix([[2.0]]), [4.0], [0.0])
        solution = solve(problem)
        assert solution.u[0] == pytest.approx(2.0, abs=1e-12)
        assert not solution.active_set[0]

    @pytest.mark.parametrize("solve", ALL_SOLVERS)
    def test_single_unknown_active(self, solve):
        problem = ObstacleProblem(sp.csr_matrix([[2.0]]), [-4.0], [0.0])
        solution = solve(problem)
        assert solution.u[0] == 0.0
        assert solution.active_set[0]

    @pytest.mark.parametrize("solve", ALL_SOLVERS)
    def test_exact_contact_load(self, solve):
        # b = A psi makes the obstacle itself optimal with zero multiplier
        psi = np.array([0.3, -0.2, 0.5])
        problem = ObstacleProblem(A3, A3 @ psi, psi)
        solution = solve(problem)
        np.testing.assert_allclose(solution.u, psi, atol=1e-11)


class TestSolverAgreement:
    def test_methods_agree_on_random_problems(self, rng):
        for _ in range(25):
            n = int(rng.integers(2, 11))
            problem = random_problem(rng, n)
            reference = enumerate_oracle(problem)
            for solution in (solve_psor(problem, tol=1e-12),
                             solve_pdas(problem, tol=1e-12)):
                np.testing.assert_allclose(solution.u, reference.u,
                                           atol=1e-10 * problem.scale)

    def test_grid_operator_problems(self, rng):
        grid = build_grid(2, [1.0, 1.0], [5, 5],
                          {"left": "dirichlet", "right": "neumann",
                           "bottom": "neumann", "top": "neumann"})
        a = assemble_a_sigma(grid, 2.0)
        for _ in range(5):
            problem = ObstacleProblem(a, rng.standard_normal(grid.n_free),
                                      rng.standard_normal(grid.n_free) * 0.3)
            u_psor = solve_psor(problem, tol=1e-12).u
            u_pdas = solve_pdas(problem, tol=1e-12).u
            np.testing.assert_allclose(u_psor, u_pdas, atol=1e-10)

    def test_psor_iterates_stay_feasible(self, rng):
        problem = random_problem(rng, 8)
        solution = solve_psor(problem, tol=1e-12)
        assert (solution.u >= problem.psi).all()

    def test_warm_start_settles_immediately(self, rng):
        problem = random_problem(rng, 12)
        first = solve_pdas(problem, tol=1e-12)
        again = solve_pdas(problem, tol=1e-12,
                           initial_active=first.active_set)
        assert again.iterations == 1
        np.testing.assert_array_equal(again.u, first.u)

    def test_factor_cache_is_shared(self, rng):
        problem = random_problem(rng, 10)
        cache: dict = {}
        first = solve_pdas(problem, tol=1e-12, factor_cache=cache)
        filled = len(cache)
        assert filled >= 1
        second = solve_pdas(problem, tol=1e-12, factor_cache=cache,
                            initial_active=first.active_set)
        np.testing.assert_array_equal(second.u, first.u)
        assert len(cache) == filled  # nothing new was factorised


class TestOptimalityStructure:
    def test_verify_conditions_passes_on_solution(self, rng):
        problem = random_problem(rng, 9)
        solution = solve_pdas(problem, tol=1e-12)
        report = verify_conditions(problem, solution.u, tol=1e-10)
        assert report.passed
        names = [c.name for c in report.checks]
        assert names == ["feasibility", "dual", "complementarity",
                         "upper_bound", "pairing"]

    def test_verify_conditions_flags_corruption(self, rng):
        problem = random_problem(rng, 9)
        solution = solve_pdas(problem, tol=1e-12)
        wrecked = solution.u.copy()
        wrecked[3] -= 0.25
        report = verify_conditions(problem, wrecked, tol=1e-10)
        assert not report.passed
        assert report.failures()

    def test_two_sided_load_bound(self, rng):
        for _ in range(10):
            problem = random_problem(rng, int(rng.integers(2, 9)))
            u = solve_pdas(problem, tol=1e-12).u
            au = problem.a @ u
            cap = np.maximum(problem.b, problem.psi_image)
            assert (au >= problem.b - 1e-9 * problem.scale).all()
            assert (au <= cap + 1e-9 * problem.scale).all()

    def test_energy_optimality_among_feasible_points(self, rng):
        problem = random_problem(rng, 8)
        u = solve_pdas(problem, tol=1e-12).u
        ju = problem.quadratic_value(u)
        for _ in range(20):
            v = problem.psi + np.abs(rng.standard_normal(8))
            assert ju <= problem.quadratic_value(v) + 1e-9

    def test_shift_equivariance(self, rng):
        problem = random_problem(rng, 7)
        shift = rng.standard_normal(7)
        shifted = ObstacleProblem(problem.a, problem.b + problem.a @ shift,
                                  problem.psi + shift)
        u = solve_pdas(problem, tol=1e-12).u
        u_shifted = solve_pdas(shifted, tol=1e-12).u
        np.testing.assert_allclose(u_shifted, u + shift, atol=1e-9)

    def test_kkt_residuals_zero_for_exact_solution(self):
        problem = tridiag_problem([-3.0, 4.0, -1.0])
        kkt = kkt_residuals(problem, np.array([0.0, 7.0 / 3.0, 2.0 / 3.0]))
        assert kkt.worst <= 1e-15
        assert kkt.scale == 4.0


class TestComparisonAndMinorant:
    def test_ordered_data_gives_ordered_minimisers(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 10))
            low = random_problem(rng, n)
            high = ObstacleProblem(low.a, low.b + rng.random(n),
                                   low.psi + rng.random(n))
            u1 = solve_pdas(low, tol=1e-12).u
            u2 = solve_pdas(high, tol=1e-12).u
            report = check_comparison(low, high, u1, u2, tol=1e-10)
            assert report.passed

    def test_comparison_precondition_names_index(self, rng):
        low = random_problem(rng, 5)
        b2 = low.b.copy()
        b2[3] -= 1.0
        high = ObstacleProblem(low.a, b2, low.psi)
        with pytest.raises(PreconditionError, match="index 3"):
            check_comparison(low, high, low.psi, low.psi)

    def test_comparison_checks_obstacles_too(self, rng):
        low = random_problem(rng, 5)
        psi2 = low.psi.copy()
        psi2[2] -= 1.0
        high = ObstacleProblem(low.a, low.b, psi2)
        with pytest.raises(PreconditionError, match="obstacle order"):
            check_comparison(low, high, low.psi, low.psi)

    def test_comparison_requires_identical_matrices(self, rng):
        p1 = random_problem(rng, 5)
        p2 = random_problem(rng, 5)
        with pytest.raises(PreconditionError, match="identical matrices"):
            check_comparison(p1, p2, p1.psi, p2.psi)

    def test_supersolution_dominates(self, rng):
        from scipy.sparse.linalg import spsolve

        for _ in range(10):
            n = int(rng.integers(2, 10))
            problem = random_problem(rng, n)
            u = solve_pdas(problem, tol=1e-12).u
            cap = np.maximum(problem.b, problem.psi_image)
            w = spsolve(problem.a.tocsc(), cap)
            report = check_minorant(problem, u, w, tol=1e-9)
            assert report.passed

    def test_minorant_precondition_below_obstacle(self, rng):
        problem = random_problem(rng, 5)
        w = problem.psi - 1.0
        with pytest.raises(PreconditionError, match="below the obstacle"):
            check_minorant(problem, problem.psi, w)

    def test_minorant_precondition_not_supersolution(self, rng):
        problem = random_problem(rng, 5)
        w = problem.psi + np.abs(rng.standard_normal(5)) + 1.0
        # make the residual negative somewhere by lifting b hugely
        bigger = ObstacleProblem(problem.a, problem.b + 100.0, problem.psi)
        with pytest.raises(PreconditionError, match="not a supersolution"):
            check_minorant(bigger, problem.psi, w)


class TestFailureModes:
    def test_oracle_refuses_large_problems(self, rng):
        n = 16
        problem = ObstacleProblem(sp.identity(n, format="csr") * 2.0,
                                  np.zeros(n), np.zeros(n))
        with pytest.raises(ProblemTooLargeError):
            enumerate_oracle(problem)

    def test_psor_convergence_error_carries_residuals(self, rng):
        problem = random_problem(rng, 20)
        with pytest.raises(ConvergenceError) as err:
            solve_psor(problem, tol=1e-14, max_iter=1)
        assert err.value.residuals is not None
        assert err.value.residuals.worst > 0.0

    def test_pdas_unsettled_active_set(self):
        problem = tridiag_problem([-3.0, 4.0, -1.0])
        with pytest.raises(ConvergenceError, match="did not settle"):
            solve_pdas(problem, tol=1e-12, max_iter=1)

    @pytest.mark.parametrize("kwargs", [
        {"tol": 0.0}, {"tol": -1.0}, {"max_iter": 0},
    ])
    def test_rejects_bad_controls(self, kwargs, rng):
        problem = random_problem(rng, 4)
        with pytest.raises(PreconditionError):
            solve_pdas(problem, **kwargs)
        with pytest.raises(PreconditionError):
            solve_psor(problem, **kwargs)

    def test_psor_rejects_bad_omega(self, rng):
        problem = random_problem(rng, 4)
        for omega in (0.0, 2.0, -0.5):
            with pytest.raises(PreconditionError):
                solve_psor(problem, omega=omega)

    def test_shape_mismatch(self):
        with pytest.raises(PreconditionError):
            ObstacleProblem(A3, np.zeros(2), np.zeros(3))
        with pytest.raises(PreconditionError):
            ObstacleProblem(A3, np.zeros(3), np.zeros(2))

    def test_pdas_rejects_bad_initial_active(self, rng):
        problem = random_problem(rng, 4)
        with pytest.raises(PreconditionError):
            solve_pdas(problem, initial_active=np.ones(3, dtype=bool))


@settings(max_examples=40)
@given(data=st.data(), n=st.integers(min_value=1, max_value=8))
def test_solver_meets_kkt_property(data, n):
    seed = data.draw(st.integers(min_value=0, max_value=2 ** 31 - 1))
    rng = np.random.default_rng(seed)
    problem = random_problem(rng, n)
    solution = solve_pdas(problem, tol=1e-11)
    assert solution.kkt.passes(1e-11)
    recomputed = kkt_residuals(problem, solution.u)
    assert recomputed.worst <= 1e-11 * problem.scale

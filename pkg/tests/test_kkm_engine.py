from fractions import Fraction
from math import ceil

import numpy as np
import pytest

from conftest import diagonal_field
from errors import ExtractionFailed, NotCovered, ResidualAboveTolerance, SolverExhausted, TooLarge
from kkm_engine import (
    BalancedTarget,
    ColoredCovering,
    balanced_point_search,
    canonical_colored_covering,
    delta_schedule,
    extract_assignment,
    kkm_checks,
    lift_colored,
    marginal_residual,
    matching_bound,
    oracle_feasible,
    oracle_solve,
    random_colored_covering,
    solve_colored_kkm,
    solve_kkm_product,
    solve_kkm_r,
)
from matching import QuotaVector, is_matching
from simplex_core import ScoreField, UnityWeights, canonical_field, check_cover_conditions, random_smooth_field

THIRD = Fraction(1, 3)


def squared_rows_field() -> ScoreField:
    """s_ij = x_i^2 y_j: balanced rows need x = (1/2, 1/2)."""

    def evaluate(factors):
        x, y = factors
        return np.multiply.outer(x**2, y)

    return ScoreField(dims=(2, 2), evaluate=evaluate, name="squared")


class TestBalancedSearch:
    def test_canonical_field_balances_at_centre(self):
        found = balanced_point_search(canonical_field((2, 2)), QuotaVector.of([1, 1]), tol=1e-9)
        x, y = found.point.factors
        assert x.coords == (Fraction(1, 2), Fraction(1, 2))
        assert y.coords == (Fraction(1, 2), Fraction(1, 2))
        assert found.residual < 1e-12

    def test_canonical_field_hits_quota_marginals(self):
        found = balanced_point_search(canonical_field((2, 3)), QuotaVector.of([1, 2]))
        x, y = found.point.factors
        assert x.coords == (THIRD, 2 * THIRD)
        assert y.coords == (THIRD, THIRD, THIRD)
        assert found.depth == 0

    def test_nonlinear_rows(self):
        found = balanced_point_search(squared_rows_field(), QuotaVector.of([1, 1]), tol=1e-9)
        np.testing.assert_allclose(found.point.factors[0].as_array(), [0.5, 0.5], atol=1e-6)
        assert found.residual < 1e-9

    def test_residual_never_increases(self):
        found = balanced_point_search(random_smooth_field((2, 3), seed=4), QuotaVector.of([2, 1]), tol=1e-8)
        assert found.history[-1] == found.residual
        assert all(b <= a for a, b in zip(found.history, found.history[1:]))

    def test_uncovered_sample_raises(self):
        with pytest.raises(NotCovered) as info:
            balanced_point_search(diagonal_field(), QuotaVector.of([1, 1]))
        assert np.all(diagonal_field().at(info.value.point) == 0)

    def test_budget_exhaustion(self):
        with pytest.raises(ResidualAboveTolerance) as info:
            balanced_point_search(random_smooth_field((2, 3), seed=1), QuotaVector.of([1, 2]), tol=1e-12, budget=0)
        assert info.value.residual >= 1e-12
        assert info.value.point.dims == (2, 3)

    def test_target_must_be_a_distribution(self):
        with pytest.raises(ValueError):
            BalancedTarget(marginals=((Fraction(1, 2), Fraction(1, 3)),))

    def test_marginal_residual(self):
        phi = np.full((2, 2), 0.25)
        assert marginal_residual(phi, [np.array([0.5, 0.5]), np.array([0.5, 0.5])]) == 0.0
        assert marginal_residual(phi, [np.array([0.25, 0.75]), np.array([0.5, 0.5])]) == pytest.approx(0.25)


class TestExtraction:
    def test_uniform_weights(self):
        w = UnityWeights(phi=np.full((2, 2), 0.25))
        assert extract_assignment(w, QuotaVector.of([1, 1])).sigma == (0, 1)

    def test_diagonal_weights(self):
        w = UnityWeights(phi=np.array([[0.5, 0.0], [0.0, 0.5]]))
        assert extract_assignment(w, QuotaVector.of([1, 1])).sigma == (0, 1)

    def test_support_forces_sigma(self):
        w = UnityWeights(phi=np.array([[1 / 3, 0.0, 0.0], [0.0, 1 / 3, 1 / 3]]))
        assert extract_assignment(w, QuotaVector.of([1, 2])).sigma == (0, 1, 1)

    def test_no_threshold_admits_assignment(self):
        w = UnityWeights(phi=np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(ExtractionFailed):
            extract_assignment(w, QuotaVector.of([1, 1]))

    def test_delta_schedule_ends_at_zero(self):
        deltas = list(delta_schedule(0.125))
        assert deltas[0] == 0.125 and deltas[-1] == 0.0
        assert all(b < a for a, b in zip(deltas, deltas[1:]))


class TestSolveProduct:
    @pytest.mark.parametrize("quota", [[1, 2], [2, 1]])
    def test_canonical_field(self, quota):
        a = QuotaVector.of(quota)
        field = canonical_field((2, 3))
        sol = solve_kkm_product(field, a)
        assert sol.assignment.respects(a)
        assert sol.residual < 1e-12
        assert all(kkm_checks(field, sol, a).values())

    def test_not_covered_propagates(self):
        with pytest.raises(NotCovered):
            solve_kkm_product(diagonal_field(), QuotaVector.of([1, 1]))

    def test_random_field_sigma_is_feasible(self):
        field = random_smooth_field((2, 3), seed=0)
        a = QuotaVector.of([1, 2])
        sol = solve_kkm_product(field, a)
        values = field.at(sol.point)
        assert all(values[i, j] > 0 for j, i in enumerate(sol.assignment.sigma))
        assert sol.residual < 1e-7
        assert oracle_feasible(field, sol.assignment.sigma, 16)

    def test_quota_must_fit(self):
        with pytest.raises(ValueError):
            solve_kkm_product(canonical_field((2, 3)), QuotaVector.of([1, 1]))

    def test_budget_exhaustion_is_reported(self):
        with pytest.raises(SolverExhausted) as info:
            solve_kkm_product(random_smooth_field((2, 3), seed=1), QuotaVector.of([1, 2]), tol=1e-12, budget=0)
        assert info.value.residual is not None


@pytest.mark.slow
@pytest.mark.parametrize("quota", [[1, 2], [2, 1]])
def test_random_fields_give_verified_solutions(quota):
    a = QuotaVector.of(quota)
    for seed in range(100):
        field = random_smooth_field((2, 3), seed=seed)
        try:
            sol = solve_kkm_product(field, a)
        except NotCovered as e:
            assert np.all(field.at(e.point) == 0)
            continue
        assert all(kkm_checks(field, sol, a).values())
        assert sol.residual < 1e-7
        assert oracle_feasible(field, sol.assignment.sigma, 16)


class TestColored:
    def test_lifted_field_is_a_valid_cover(self):
        report = check_cover_conditions(lift_colored(canonical_colored_covering(2, 3)), 4)
        assert report.boundary_ok
        assert report.uncovered == []

    def test_single_row(self):
        sol = solve_colored_kkm(canonical_colored_covering(1, 3), QuotaVector.of([3]))
        assert sol.assignment.sigma == (0, 0, 0)

    def test_canonical_two_by_two(self):
        sol = solve_colored_kkm(canonical_colored_covering(2, 2), QuotaVector.of([1, 1]))
        assert sol.assignment.sigma == (0, 1)
        assert all(c > 0 for c in sol.point.factors[0].coords)

    def test_clamped_margins(self):
        def evaluate(x):
            return np.array(
                [
                    [x[0], max(0.0, x[0] - 0.4)],
                    [max(0.0, 0.6 - x[0]), x[1]],
                ]
            )

        colored = ColoredCovering(n=2, m=2, evaluate=evaluate, name="clamped")
        sol = solve_colored_kkm(colored, QuotaVector.of([1, 1]))
        x0 = float(sol.point.factors[0].coords[0])
        base = evaluate(sol.point.factors[0].as_array())
        assert all(base[i, j] > 0 for j, i in enumerate(sol.assignment.sigma))
        if sol.assignment.sigma == (1, 0):
            assert 0.4 < x0 < 0.6

    def test_random_colored_covering(self):
        colored = random_colored_covering(2, 3, seed=8)
        sol = solve_colored_kkm(colored, QuotaVector.of([2, 1]))
        base = colored.evaluate(sol.point.factors[0].as_array())
        assert all(base[i, j] > 0 for j, i in enumerate(sol.assignment.sigma))


class TestRFactor:
    @pytest.mark.parametrize("r,n", [(3, 2), (3, 3), (4, 2), (2, 3)])
    def test_canonical_fields(self, r, n):
        field = canonical_field((n,) * r)
        sol = solve_kkm_r(field)
        values = field.at(sol.point)
        assert sol.matching.size >= ceil(n / (r - 1))
        assert is_matching(sol.matching.edges)
        assert all(values[e] > 0 for e in sol.matching.edges)
        assert all(kkm_checks(field, sol).values())

    def test_canonical_three_by_three_is_perfect(self):
        sol = solve_kkm_r(canonical_field((3, 3, 3)))
        assert sol.matching.size == 3

    def test_bound(self):
        assert matching_bound(3, 3) == 2
        assert matching_bound(4, 2) == 4
        assert matching_bound(2, 4) == 1

    def test_unequal_factors_rejected(self):
        with pytest.raises(ValueError):
            solve_kkm_r(canonical_field((2, 3, 2)))


class TestOracle:
    def test_canonical_field(self):
        best = oracle_solve(canonical_field((2, 2)), QuotaVector.of([1, 1]), 4)
        assert best.assignment.sigma == (0, 1)
        assert best.min_score == 0.25
        assert best.point.to_strings() == [["1/2", "1/2"], ["1/2", "1/2"]]

    def test_diagonal_field(self):
        field = diagonal_field()
        best = oracle_solve(field, QuotaVector.of([1, 1]), 4)
        assert best.assignment.sigma == (0, 1)
        assert oracle_feasible(field, (0, 1), 4)
        assert not oracle_feasible(field, (1, 0), 4)

    def test_nothing_feasible(self):
        zero = ScoreField(dims=(2, 2), evaluate=lambda factors: np.zeros((2, 2)), name="zero")
        assert oracle_solve(zero, QuotaVector.of([1, 1]), 3) is None

    def test_size_limit(self):
        with pytest.raises(TooLarge):
            oracle_solve(canonical_field((2, 3)), QuotaVector.of([1, 2]), 200)

    def test_random_field_agrees_with_solver(self):
        field = random_smooth_field((2, 3), seed=12)
        a = QuotaVector.of([2, 1])
        sol = solve_kkm_product(field, a)
        assert oracle_feasible(field, sol.assignment.sigma, 16)
        assert oracle_solve(field, a, 8) is not None

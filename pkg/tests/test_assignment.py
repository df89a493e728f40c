import numpy as np
import pytest

from cellgraph.assignment import (AssignmentProblem, AssignmentResult,
                                  brute_force_solve, percentile_filter, solve)


class TestSolveBasics:
    def test_identity_dominant_2x2(self):
        result = solve(AssignmentProblem(np.array([[5.0, 1.0], [1.0, 5.0]])))
        assert result.pairs == [(0, 0), (1, 1)]
        assert result.total == 10.0
        assert not result.partial

    def test_single_row_argmax(self):
        result = solve(AssignmentProblem(np.array([[2.0, 9.0, 4.0]])))
        assert result.pairs == [(0, 1)]
        assert result.total == 9.0

    def test_permutation_matrix_recovered(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            perm = rng.permutation(n)
            profits = np.zeros((n, n))
            profits[np.arange(n), perm] = 1.0
            result = solve(AssignmentProblem(profits))
            assert [j for _, j in result.pairs] == perm.tolist()

    def test_empty_problem_rejected(self):
        with pytest.raises(ValueError):
            AssignmentProblem(np.zeros((0, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            AssignmentProblem(np.array([[np.inf]]))


class TestSolveAgainstBruteForce:
    def test_random_5x5_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            profits = rng.uniform(-5, 5, size=(5, 5))
            mine = solve(AssignmentProblem(profits))
            oracle = brute_force_solve(AssignmentProblem(profits))
            assert mine.total == oracle.total
            assert mine.pairs == oracle.pairs

    def test_random_rectangular_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            profits = rng.uniform(-3, 3, size=(4, 7))
            mine = solve(AssignmentProblem(profits))
            oracle = brute_force_solve(AssignmentProblem(profits))
            assert mine.total == oracle.total
            assert mine.pairs == oracle.pairs

    def test_integer_ties_lexicographic(self):
        # every assignment of this matrix has equal total: the pairing must
        # be the lexicographically smallest one
        profits = np.ones((3, 3))
        result = solve(AssignmentProblem(profits))
        assert result.pairs == [(0, 0), (1, 1), (2, 2)]
        rng = np.random.default_rng(3)
        for _ in range(50):
            profits = rng.integers(0, 3, size=(4, 4)).astype(float)
            mine = solve(AssignmentProblem(profits))
            oracle = brute_force_solve(AssignmentProblem(profits))
            assert mine.total == oracle.total
            assert mine.pairs == oracle.pairs

    def test_forbidden_edges_respected(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            profits = rng.uniform(0, 1, size=(4, 5))
            allowed = rng.random((4, 5)) < 0.7
            allowed[np.arange(4), rng.integers(0, 5, 4)] = True  # feasible-ish
            problem = AssignmentProblem(profits, allowed)
            try:
                oracle = brute_force_solve(problem)
            except ValueError:
                continue  # infeasible sample: partial case tested elsewhere
            mine = solve(problem)
            assert mine.total == oracle.total
            for i, j in mine.pairs:
                assert allowed[i, j]


class TestSolveProperties:
    def test_constant_shift_keeps_pairing(self):
        rng = np.random.default_rng(5)
        profits = rng.uniform(0, 1, size=(6, 6))
        base = solve(AssignmentProblem(profits))
        shifted = solve(AssignmentProblem(profits + 123.456))
        assert base.pairs == shifted.pairs

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            profits = rng.uniform(-1, 1, size=(5, 5))
            a = solve(AssignmentProblem(profits))
            b = solve(AssignmentProblem(profits.T))
            assert sorted((j, i) for i, j in b.pairs) == a.pairs
            assert a.total == pytest.approx(b.total, abs=1e-12)

    def test_rectangular_with_dead_row_still_full_cardinality(self):
        profits = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        allowed = np.array([[True, False], [False, False], [True, True]])
        result = solve(AssignmentProblem(profits, allowed))
        # a matching of size min(3, 2) = 2 exists: (0,0), (2,1)
        assert result.pairs == [(0, 0), (2, 1)]
        assert result.total == 7.0
        assert not result.partial

    def test_infeasible_returns_partial_with_flag(self):
        profits = np.array([[1.0, 9.0], [3.0, 9.0]])
        allowed = np.array([[True, False], [True, False]])
        result = solve(AssignmentProblem(profits, allowed))
        assert result.partial
        assert result.pairs == [(1, 0)]  # higher-profit row wins column 0
        assert result.total == 3.0


class TestPercentileFilter:
    def test_percentile_zero_keeps_everything(self):
        scores = np.random.default_rng(7).standard_normal((6, 4))
        assert percentile_filter(scores, 0.0).all()

    def test_spec_2x2_example(self):
        keep = percentile_filter(np.array([[1.0, 2.0], [3.0, 4.0]]), 75.0)
        # threshold 3.25 keeps only 4; row 0 re-adds its max (2), column 0
        # re-adds its max (3)
        assert keep.tolist() == [[False, True], [True, True]]

    def test_survivor_bounds(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            scores = rng.standard_normal((9, 5))
            keep = percentile_filter(scores, rng.uniform(0, 99.9))
            assert keep.sum() <= scores.size
            assert keep.any(axis=1).all()
            assert keep.any(axis=0).all()
            assert keep.sum() >= max(scores.shape)

    def test_invalid_percentile(self):
        with pytest.raises(ValueError):
            percentile_filter(np.ones((2, 2)), 100.0)
        with pytest.raises(ValueError):
            percentile_filter(np.ones((2, 2)), -1.0)

    def test_filter_then_solve_maximum_cardinality(self):
        # the re-add rule keeps every row and column populated, but a
        # perfect matching can still be blocked (Hall); solve must then
        # return a maximum-cardinality matching and flag it partial

        def max_matching_size(allowed):
            match_of_col = {}

            def augment(row, banned):
                for col in np.flatnonzero(allowed[row]):
                    if col in banned:
                        continue
                    banned.add(col)
                    if col not in match_of_col or augment(match_of_col[col],
                                                          banned):
                        match_of_col[col] = row
                        return True
                return False

            for r in range(allowed.shape[0]):
                augment(r, set())
            return len(match_of_col)

        rng = np.random.default_rng(9)
        for pct in (50.0, 75.0, 97.0):
            scores = rng.standard_normal((8, 8))
            keep = percentile_filter(scores, pct)
            result = solve(AssignmentProblem(scores, keep))
            assert all(keep[i, j] for i, j in result.pairs)
            assert len(result.pairs) == max_matching_size(keep)
            assert result.partial == (len(result.pairs) < 8)

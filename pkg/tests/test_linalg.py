import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from frechet_floquet.errors import ConditioningError, LevelRangeError, NumericError, ShapeError, ValidationError, VerificationError
from frechet_floquet.linalg import (
    LogBranch,
    compatible_log,
    compatible_log_detailed,
    divided_difference_exp,
    exp_tower,
    matrix_exp,
    phi_series,
    principal_log,
)
from frechet_floquet.tower import InvertibleNestedMatrix, NestedMatrix, per_level_max, truncate

from conftest import random_nested

LOG2, LOG4 = math.log(2), math.log(4)


def series_oracle(b, c, terms=200):
    """Literal double sum, with exact factorials via math.factorial."""
    b = np.asarray(b, dtype=complex)
    n = b.shape[0]
    powers = [np.eye(n, dtype=complex)]
    for _ in range(terms):
        powers.append(powers[-1] @ b)
    s = np.zeros((n, n), dtype=complex)
    for k in range(1, terms):
        inner = sum(powers[k - j] * c ** (j - 1) for j in range(1, k + 1))
        s += inner / math.factorial(k)
    return s


class TestMatrixExp:
    def test_zero(self):
        np.testing.assert_array_equal(matrix_exp(np.zeros((3, 3))), np.eye(3))

    def test_nilpotent(self):
        np.testing.assert_allclose(matrix_exp([[0, 0], [1, 0]]), [[1, 0], [1, 1]], atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(matrix_exp(np.diag([LOG2, LOG4])), np.diag([2, 4]), rtol=1e-14)

    def test_triangular_closed_form(self):
        a, c, y = 0.3 + 1j, -1.2, 2.5
        want = [[cmath.exp(a), 0], [y * (cmath.exp(a) - cmath.exp(c)) / (a - c), cmath.exp(c)]]
        np.testing.assert_allclose(matrix_exp([[a, 0], [y, c]]), want, rtol=1e-13)

    def test_against_scipy(self, rng):
        for _ in range(20):
            b = rng.normal(size=(6, 6)) * 2 + 1j * rng.normal(size=(6, 6))
            want = expm(b)
            got = matrix_exp(b)
            assert np.max(np.abs(got - want)) <= 1e-12 * max(1, np.max(np.abs(want)))

    def test_lower_triangular_exact(self, rng):
        b = random_nested(rng, 6) * 3
        assert not np.any(np.triu(matrix_exp(b), 1))

    def test_stack_matches_single(self, rng):
        bs = np.stack([random_nested(rng, 4) * s for s in (0.01, 1, 10)])
        out = matrix_exp(bs)
        for b, e in zip(bs, out):
            np.testing.assert_array_equal(e, matrix_exp(b))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            matrix_exp(np.zeros((2, 3)))

    def test_overflow(self):
        with pytest.raises(NumericError):
            matrix_exp(np.array([[1e40]]))
        with pytest.raises(NumericError):
            matrix_exp(np.array([[800.0]]))

    def test_non_finite(self):
        with pytest.raises(NumericError):
            matrix_exp(np.array([[np.nan]]))


class TestExpTower:
    def test_zero(self):
        assert np.array_equal(exp_tower(NestedMatrix.zeros(3)).matrix, np.eye(3))

    def test_nilpotent(self):
        e = exp_tower(NestedMatrix([[0, 0], [1, 0]]))
        np.testing.assert_allclose(e.matrix, [[1, 0], [1, 1]], atol=1e-15)
        np.testing.assert_allclose(e.level(1), [[1]])

    def test_commutes_with_truncation(self, rng):
        b = NestedMatrix(random_nested(rng, 5))
        for n in range(1, 6):
            lhs = truncate(exp_tower(b), n).matrix
            rhs = exp_tower(truncate(b, n)).matrix
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)
            # brute force: the series of the level-n block alone
            np.testing.assert_allclose(lhs, expm(b.matrix[:n, :n]), atol=1e-12)

    def test_result_invertible(self, rng):
        e = exp_tower(NestedMatrix(random_nested(rng, 6)))
        assert isinstance(e, InvertibleNestedMatrix)
        assert np.all(np.abs(e.diagonal) > 0)


class TestPhiSeries:
    def test_zero(self):
        np.testing.assert_allclose(phi_series([[0]], 0).S, [[1]])

    def test_e(self):
        np.testing.assert_allclose(phi_series([[1]], 1).S, [[math.e]], rtol=1e-12)

    def test_divided_difference(self):
        np.testing.assert_allclose(phi_series([[LOG2]], LOG4).S, [[2 / LOG2]], rtol=1e-12)
        assert abs(2 / LOG2 - 2.885390) < 1e-6

    def test_matches_literal_sum(self, rng):
        b = random_nested(rng, 4) / 2
        c = 0.4 - 0.9j
        np.testing.assert_allclose(phi_series(b, c).S, series_oracle(b, c, terms=80), rtol=1e-11, atol=1e-12)

    def test_functional_identity(self, rng):
        # S (B - cI) = e^B - e^c I
        b = random_nested(rng, 5)
        c = 0.1 + 2j
        s = phi_series(b, c).S
        np.testing.assert_allclose(s @ (b - c * np.eye(5)), expm(b) - cmath.exp(c) * np.eye(5), atol=1e-11)

    def test_lower_triangular(self, rng):
        s = phi_series(random_nested(rng, 5), 0.3).S
        assert not np.any(np.triu(s, 1))

    def test_diagonal_closed_form(self, rng):
        for _ in range(50):
            b = random_nested(rng, 5)
            b[np.diag_indices(5)] = rng.uniform(-2, 2, 5) + 1j * rng.uniform(-np.pi, np.pi, 5)
            c = rng.uniform(-2, 2) + 1j * rng.uniform(-np.pi, np.pi)
            phi = phi_series(b, c)
            for bi, g in zip(np.diag(b), phi.gammas):
                want = divided_difference_exp(bi, c)
                assert abs(g - want) <= 1e-10 * abs(want)

    def test_center_equal_to_eigenvalue(self):
        phi = phi_series([[0.7]], 0.7)
        assert abs(phi.S[0, 0] - math.exp(0.7)) <= 1e-13

    def test_not_lower(self):
        with pytest.raises(ValidationError):
            phi_series([[1, 1], [0, 1]], 0)

    def test_non_convergence(self):
        with pytest.raises(NumericError):
            phi_series([[30.0]], 0, max_terms=10)

    def test_metadata(self):
        b = np.array([[0.5]])
        phi = phi_series(b, 0.25)
        assert phi.center == 0.25
        np.testing.assert_array_equal(phi.source, b)
        assert phi.terms > 1


@settings(max_examples=200, deadline=None)
@given(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_scalar_series_vs_divided_difference(b, c):
    got = phi_series([[b]], c).S[0, 0]
    d = b - c
    if abs(d) >= 1e-3:
        want = (cmath.exp(b) - cmath.exp(c)) / d
        assert abs(got - want) <= 1e-10 * abs(want)
    else:
        taylor = cmath.exp(c) * (1 + d / 2 + d * d / 6)
        assert abs(got - taylor) <= 1e-8


@settings(max_examples=100, deadline=None)
@given(st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False),
       st.floats(min_value=1e-9, max_value=9e-4),
       st.floats(min_value=-math.pi, max_value=math.pi))
def test_near_equal_taylor(c, r, theta):
    b = c + r * cmath.exp(1j * theta)
    got = phi_series([[b]], c).S[0, 0]
    d = b - c
    assert abs(got - cmath.exp(c) * (1 + d / 2 + d * d / 6)) <= 1e-8


class TestLogBranch:
    def test_principal_on_negative_axis(self):
        assert principal_log(-1).imag == pytest.approx(math.pi)
        assert principal_log(complex(-1, -0.0)).imag == pytest.approx(math.pi)

    def test_winding(self):
        br = LogBranch({2: 1})
        assert br.log(1, 2) == pytest.approx(2j * math.pi)
        assert br.log(1, 1) == 0

    def test_invalid_level(self):
        with pytest.raises(LevelRangeError):
            LogBranch({0: 1})
        with pytest.raises(LevelRangeError):
            compatible_log(InvertibleNestedMatrix.identity(2), LogBranch({3: 1}))

    def test_non_integer_winding(self):
        with pytest.raises(ValidationError):
            LogBranch({1: 0.5})


class TestCompatibleLog:
    def test_identity(self):
        assert compatible_log(InvertibleNestedMatrix.identity(4)) == NestedMatrix.zeros(4)

    def test_unipotent(self):
        b = compatible_log(InvertibleNestedMatrix([[1, 0], [1, 1]]))
        np.testing.assert_allclose(b.matrix, [[0, 0], [1, 0]], atol=1e-15)
        np.testing.assert_allclose(matrix_exp(b.matrix), [[1, 0], [1, 1]], atol=1e-15)

    def test_worked_instance(self):
        res = compatible_log_detailed(InvertibleNestedMatrix([[2, 0], [3, 4]]))
        b = res.bbar.matrix
        assert abs(b[0, 0] - LOG2) < 1e-14
        assert abs(b[1, 1] - LOG4) < 1e-14
        assert abs(b[1, 0] - 3 * LOG2 / 2) < 1e-10
        assert abs(b[1, 0] - 1.039721) < 1e-6
        assert abs(res.steps[0].gammas[0] - 2 / LOG2) < 1e-12
        # lower-left of exp via the triangular closed form: y (e^a - e^c)/(a - c)
        assert abs(b[1, 0] * (2 - 4) / (LOG2 - LOG4) - 3) < 1e-10

    def test_round_trip_random(self, rng):
        for _ in range(100):
            depth = int(rng.integers(1, 9))
            m = InvertibleNestedMatrix(random_nested(rng, depth))
            b = compatible_log(m)
            err = per_level_max(exp_tower(b).matrix - m.matrix)
            assert np.max(err) <= 1e-8

    def test_nesting_exact(self, rng):
        for _ in range(20):
            b = compatible_log(InvertibleNestedMatrix(random_nested(rng, 6)))
            assert not np.any(np.triu(b.matrix, 1))

    def test_levels_are_logs_of_levels(self, rng):
        m = InvertibleNestedMatrix(random_nested(rng, 5))
        b = compatible_log(m)
        for n in range(1, 6):
            np.testing.assert_allclose(expm(b.level(n)), m.level(n), atol=1e-9)

    def test_branch_shift(self, rng):
        m = InvertibleNestedMatrix(random_nested(rng, 5))
        base = compatible_log(m)
        for k in range(1, 6):
            for dm in (-1, 1):
                shifted = compatible_log(m, LogBranch({k: dm}))
                diff = np.diag(shifted.matrix) - np.diag(base.matrix)
                want = np.zeros(5, dtype=complex)
                want[k - 1] = 2j * math.pi * dm
                np.testing.assert_allclose(diff, want, atol=1e-12)
                np.testing.assert_allclose(matrix_exp(shifted.matrix), m.matrix, atol=1e-8)

    def test_gammas_nonzero(self, rng):
        for _ in range(100):
            depth = int(rng.integers(2, 9))
            res = compatible_log_detailed(InvertibleNestedMatrix(random_nested(rng, depth)))
            for step in res.steps:
                assert np.all(np.abs(step.gammas) >= 1e-12)

    def test_equal_eigenvalues_distinct_branches_is_singular(self):
        # lam_1 = lam_2 = 1 with logs 0 and 2 pi i: gamma = 0, no nested log exists
        with pytest.raises(ConditioningError):
            compatible_log(InvertibleNestedMatrix([[1, 0], [1, 1]]), LogBranch({2: 1}))

    def test_verification_error(self):
        with pytest.raises(VerificationError):
            compatible_log(InvertibleNestedMatrix([[2, 0], [3, 4]]), tol=1e-30)

    def test_accepts_plain_nested(self):
        b = compatible_log(NestedMatrix([[2, 0], [3, 4]]))
        assert isinstance(b, NestedMatrix)

    def test_singular_input(self):
        with pytest.raises(ConditioningError):
            compatible_log(NestedMatrix([[2, 0], [3, 0]]))

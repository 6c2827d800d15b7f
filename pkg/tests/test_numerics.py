import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsdl.numerics import (FactorizationError, NonFiniteError, ShapeError, SPDFactor, add,
                           frobenius_norm_sq, hadamard, matmul, scale, solve_spd, sub,
                           sum_all, transpose)


def triple_loop(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T / n + np.eye(n)


class TestMatmul:
    def test_identity(self, rng):
        A = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(matmul(np.eye(3), A), A)

    def test_hand_arithmetic(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(matmul(a, b), triple_loop(a.tolist(), b.tolist()), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self, rng):
        for _ in range(20):
            a, b, c = (rng.normal(size=s) for s in [(6, 5), (5, 7), (7, 4)])
            left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
            assert np.linalg.norm(left - right) <= 1e-10 * np.linalg.norm(left)

    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteError):
            matmul([[1e308, 1e308]], [[1e308], [1e308]])


class TestTranspose:
    def test_involution(self, rng):
        A = rng.normal(size=(4, 7))
        np.testing.assert_array_equal(transpose(transpose(A)), A)

    def test_row_to_column(self):
        assert transpose(np.ones((1, 5))).shape == (5, 1)

    def test_small(self):
        np.testing.assert_array_equal(transpose([[1, 2], [3, 4]]), [[1, 3], [2, 4]])


class TestSolveSPD:
    def test_identity_system(self, rng):
        b = rng.normal(size=(4, 2))
        np.testing.assert_allclose(solve_spd(np.eye(4), b), b, rtol=0, atol=0)

    def test_scalar_system(self, rng):
        b = rng.normal(size=(4, 1))
        np.testing.assert_allclose(solve_spd(2 * np.eye(4), b), b / 2, rtol=1e-15)

    def test_cramer_oracle(self):
        m, rhs = [[2.5, 1.0], [1.0, 2.5]], [4.0, 5.0]
        det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
        x0 = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det
        x1 = (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det
        got = solve_spd(m, rhs).ravel()
        np.testing.assert_allclose(got, [x0, x1], rtol=1e-14)
        np.testing.assert_allclose(got, [0.952381, 1.619048], atol=5e-7)

    def test_non_square(self):
        with pytest.raises(ShapeError):
            solve_spd(np.ones((2, 3)), np.ones((2, 1)))

    def test_rhs_rows(self):
        with pytest.raises(ShapeError):
            solve_spd(np.eye(3), np.ones((2, 1)))

    def test_non_symmetric(self):
        with pytest.raises(ShapeError):
            solve_spd([[2.0, 1.0], [0.0, 2.0]], [1.0, 1.0])

    def test_not_positive_definite_reports_pivot(self):
        m = np.diag([1.0, 2.0, -1.0, 4.0])
        with pytest.raises(FactorizationError) as exc:
            solve_spd(m, np.ones(4))
        assert exc.value.pivot == 2
        assert "pivot 2" in str(exc.value)

    @pytest.mark.parametrize("n", [1, 2, 7, 32, 100, 256])
    def test_residual_bound(self, n):
        rng = np.random.default_rng(n)
        m, rhs = random_spd(rng, n), rng.normal(size=(n, 3))
        x = solve_spd(m, rhs)
        assert np.linalg.norm(m @ x - rhs) <= 1e-8 * (1 + np.linalg.norm(rhs))

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 40), seed=st.integers(0, 2**32 - 1))
    def test_residual_bound_property(self, n, seed):
        rng = np.random.default_rng(seed)
        m, rhs = random_spd(rng, n), rng.normal(size=(n, 2))
        x = solve_spd(m, rhs)
        assert np.linalg.norm(m @ x - rhs) <= 1e-8 * (1 + np.linalg.norm(rhs))

    def test_factor_reuse_matches_fresh_solve(self, rng):
        m = random_spd(rng, 6)
        f = SPDFactor(m)
        for _ in range(3):
            b = rng.normal(size=(6, 2))
            np.testing.assert_array_equal(f.solve(b), solve_spd(m, b))

    def test_deterministic(self, rng):
        m, b = random_spd(rng, 50), rng.normal(size=(50, 4))
        assert solve_spd(m, b).tobytes() == solve_spd(m, b).tobytes()


class TestElementwise:
    def test_norm_of_zero(self):
        assert frobenius_norm_sq(np.zeros((3, 3))) == 0

    def test_norm_hand(self):
        assert frobenius_norm_sq([[3, 4]]) == 25

    def test_add_negation(self, rng):
        A = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(add(A, scale(A, -1)), np.zeros((3, 4)))

    def test_sub_hadamard_sum(self):
        a, b = np.array([[1.0, 2.0]]), np.array([[3.0, 5.0]])
        np.testing.assert_array_equal(sub(b, a), [[2, 3]])
        np.testing.assert_array_equal(hadamard(a, b), [[3, 10]])
        assert sum_all(b) == 8

    @pytest.mark.parametrize("op", [add, sub, hadamard])
    def test_shape_mismatch(self, op):
        with pytest.raises(ShapeError):
            op(np.ones((2, 2)), np.ones((2, 3)))

    def test_overflow_raises(self):
        with pytest.raises(NonFiniteError):
            scale([[1e308]], 10)

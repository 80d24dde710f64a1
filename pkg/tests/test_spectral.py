import math

import numpy as np
import pytest

from robustfilter.spectral import (
    ConvergenceError,
    FourthMomentOperator,
    SingularMatrixError,
    flatten,
    fourth_moment_matvec,
    inverse_sqrt,
    jacobi_eigh,
    sharpen,
    symmetric_eigh,
    top_eigenpair,
    top_eigenpair_lanczos,
    top_eigenpair_lenient,
    variance_of_quadratic,
)


def random_symmetric(rng, d):
    A = rng.standard_normal((d, d))
    return (A + A.T) / 2


def dense_T(Y):
    """Explicit d^2 x d^2 fourth-moment matrix built from Kronecker products."""
    n, d = Y.shape
    Z = np.stack([np.kron(y, y) for y in Y])
    I = np.eye(d).reshape(-1)
    return Z.T @ Z / n - np.outer(I, I)


class TestJacobi:
    @pytest.mark.parametrize("d", [1, 2, 5, 12, 30])
    def test_matches_lapack(self, d):
        M = random_symmetric(np.random.default_rng(d), d)
        w, V = jacobi_eigh(M)
        assert np.allclose(w, np.linalg.eigvalsh(M), atol=1e-10)
        assert np.allclose(V.T @ V, np.eye(d), atol=1e-10)
        assert np.allclose(M @ V, V * w, atol=1e-9)

    def test_ascending_and_degenerate(self):
        w, V = jacobi_eigh(np.diag([3.0, 1.0, 1.0, -2.0]))
        assert np.array_equal(w, [-2.0, 1.0, 1.0, 3.0])

    def test_huge_dynamic_range(self):
        M = np.array([[1e200, 1.0], [1.0, -1e200]])
        w, _ = jacobi_eigh(M)
        assert np.all(np.isfinite(w))

    def test_dispatch(self):
        M = random_symmetric(np.random.default_rng(0), 70)
        w, V = symmetric_eigh(M)
        assert np.allclose(M @ V, V * w, atol=1e-9)

    def test_nonsquare(self):
        with pytest.raises(ValueError):
            jacobi_eigh(np.zeros((2, 3)))


class TestInverseSqrt:
    def test_examples(self):
        assert np.allclose(inverse_sqrt(np.eye(3)), np.eye(3))
        assert np.allclose(inverse_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]))

    def test_random_pd(self):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((8, 8))
        M = B @ B.T + 0.1 * np.eye(8)
        R = inverse_sqrt(M)
        assert np.allclose(R @ M @ R, np.eye(8), atol=1e-8)
        assert np.allclose(R, R.T)
        assert np.linalg.eigvalsh(R).min() > 0
        assert np.linalg.norm(R @ M - M @ R) <= 1e-8 * np.linalg.norm(M)

    def test_singular_names_eigenvalue(self):
        with pytest.raises(SingularMatrixError, match="smallest eigenvalue"):
            inverse_sqrt(np.diag([1.0, 1e-12]))
        with pytest.raises(np.linalg.LinAlgError):
            inverse_sqrt(np.zeros((2, 2)))


class TestPowerIteration:
    def test_identity(self):
        pair = top_eigenpair(np.eye(4))
        assert pair.value == pytest.approx(1.0)
        assert pair.residual == pytest.approx(0.0, abs=1e-12)
        assert np.linalg.norm(pair.vector) == pytest.approx(1.0, abs=1e-12)

    def test_negative_dominant(self):
        pair = top_eigenpair(np.diag([3.0, 1.0, -5.0]))
        assert pair.value == pytest.approx(-5.0, abs=1e-6)
        assert abs(pair.vector[2]) == pytest.approx(1.0, abs=1e-6)

    def test_plus_minus_tie_resolved_by_shift(self):
        # +4 and -4.2 compete; plain iteration alternates, the shifted runs separate them
        pair = top_eigenpair(np.diag([4.0, -4.2, 1.0]), max_iter=2000)
        assert pair.value == pytest.approx(-4.2, abs=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        M = random_symmetric(rng, 10)
        w, V = jacobi_eigh(M)
        k = int(np.argmax(np.abs(w)))
        pair = top_eigenpair(M, tol=1e-10, max_iter=20000, rng=np.random.default_rng(seed))
        assert pair.value == pytest.approx(w[k], abs=1e-6)
        assert abs(pair.vector @ V[:, k]) == pytest.approx(1.0, abs=1e-4)

    def test_callable_needs_k(self):
        with pytest.raises(ValueError):
            top_eigenpair(lambda v: v)

    def test_nonconvergence_reports_best(self):
        M = np.diag([1.0, 0.999999, 0.5])
        with pytest.raises(ConvergenceError) as info:
            top_eigenpair(M, tol=1e-14, max_iter=5)
        assert info.value.best.iterations >= 5
        assert not top_eigenpair_lenient(M, tol=1e-14, max_iter=5).converged

    def test_negation(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            M = random_symmetric(rng, 6)
            a = top_eigenpair(M, tol=1e-10, max_iter=20000, rng=np.random.default_rng(1))
            b = top_eigenpair(-M, tol=1e-10, max_iter=20000, rng=np.random.default_rng(1))
            assert b.value == pytest.approx(-a.value, abs=1e-6)
            assert abs(a.vector @ b.vector) == pytest.approx(1.0, abs=1e-4)


class TestLanczos:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_oracle(self, seed):
        M = random_symmetric(np.random.default_rng(200 + seed), 12)
        w, V = jacobi_eigh(M)
        k = int(np.argmax(np.abs(w)))
        pair = top_eigenpair_lanczos(M, tol=1e-12, rng=np.random.default_rng(seed))
        assert pair.value == pytest.approx(w[k], abs=1e-9)
        assert abs(pair.vector @ V[:, k]) == pytest.approx(1.0, abs=1e-6)

    def test_psd_operator_agrees_with_power(self):
        Y = np.random.default_rng(3).standard_normal((200, 4))
        Y = Y @ inverse_sqrt(Y.T @ Y / 200)
        op = FourthMomentOperator(Y)
        a = top_eigenpair_lanczos(op, op.k, tol=1e-10, psd=True)
        b = top_eigenpair(op, op.k, tol=1e-10, max_iter=100_000, psd=True)
        assert a.value == pytest.approx(b.value, rel=1e-8)
        assert np.linalg.eigvalsh(dense_T(Y)).min() > -1e-10

    def test_tiny_operator(self):
        assert top_eigenpair_lanczos(np.array([[2.0]])).value == pytest.approx(2.0)


class TestFlatten:
    def test_examples(self):
        assert np.array_equal(flatten(np.eye(2)), [1.0, 0.0, 0.0, 1.0])
        M = np.random.default_rng(0).standard_normal((5, 5))
        assert np.array_equal(sharpen(flatten(M)), M)

    def test_trace_identity(self):
        rng = np.random.default_rng(1)
        A, B = rng.standard_normal((2, 4, 4))
        assert flatten(A) @ flatten(B) == pytest.approx(np.trace(A.T @ B))

    def test_not_square(self):
        with pytest.raises(ValueError):
            sharpen(np.zeros(5))


class TestFourthMoment:
    def test_single_sample_hand_computation(self):
        d = 3
        op = FourthMomentOperator(np.eye(d)[:1])
        I_flat = flatten(np.eye(d))
        z = np.kron(np.eye(d)[0], np.eye(d)[0])
        assert np.allclose(fourth_moment_matvec(op, I_flat), -d * I_flat + z)

    def test_dense_oracle(self):
        Y = np.random.default_rng(4).standard_normal((20, 3))
        T = dense_T(Y)
        op = FourthMomentOperator(Y)
        for w in np.random.default_rng(5).standard_normal((5, 9)):
            assert np.allclose(op(w), T @ w, atol=1e-10)

    def test_dense_oracle_many_small(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            d, n = int(rng.integers(1, 5)), int(rng.integers(1, 31))
            Y = rng.standard_normal((n, d))
            w = rng.standard_normal(d * d)
            assert np.allclose(FourthMomentOperator(Y).matvec(w), dense_T(Y) @ w, atol=1e-10)

    def test_symmetry(self):
        op = FourthMomentOperator(np.random.default_rng(8).standard_normal((40, 4)))
        u, w = np.random.default_rng(9).standard_normal((2, 16))
        assert abs(u @ op(w) - w @ op(u)) <= 1e-9

    def test_norm_bound(self):
        Y = np.random.default_rng(10).standard_normal((25, 3))
        assert np.abs(np.linalg.eigvalsh(dense_T(Y))).max() <= FourthMomentOperator(Y).norm_bound()


class TestVarianceOfQuadratic:
    def test_examples(self):
        E = np.zeros((3, 3))
        E[0, 0] = 1.0
        assert variance_of_quadratic(E) == pytest.approx(1.0)
        assert variance_of_quadratic(np.eye(6)) == pytest.approx(6.0)

    def test_transpose_invariant(self):
        M = np.random.default_rng(11).standard_normal((5, 5))
        assert variance_of_quadratic(M) == variance_of_quadratic(M.T)

    def test_monte_carlo(self):
        rng = np.random.default_rng(12)
        M = rng.standard_normal((6, 6))
        y = rng.standard_normal((1_000_000, 6))
        p = (np.einsum("ni,ij,nj->n", y, M, y) - np.trace(M)) / math.sqrt(2.0)
        assert p.var() == pytest.approx(variance_of_quadratic(M), rel=0.01)

"""Linear-algebra kernels used by the filters.

Power iteration (or ARPACK Lanczos) for a single extreme eigenpair, a cyclic Jacobi dense
eigensolver, PSD inverse square roots, the flatten/sharpen maps between
``d x d`` matrices and ``d^2`` vectors, and a matrix-free fourth-moment
operator over whitened samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

JACOBI_MAX_DIM = 64

Operator = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, eigenvalue: float, scale: float):
        self.eigenvalue = eigenvalue
        super().__init__(
            f"matrix is numerically singular: smallest eigenvalue {eigenvalue:.6g} "
            f"(spectral norm {scale:.6g})"
        )


class ConvergenceError(RuntimeError):
    """Power iteration hit ``max_iter``; ``best`` holds the final iterate."""

    def __init__(self, best: "EigenPair"):
        self.best = best
        super().__init__(
            f"power iteration did not converge in {best.iterations} iterations "
            f"(residual {best.residual:.3g})"
        )


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float
    converged: bool = True


# ---------------------------------------------------------------------------
# Dense symmetric eigendecomposition


def jacobi_eigh(A, tol: float = 1e-13, max_sweeps: int = 60):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with ascending eigenvalues ``w`` and orthonormal
    eigenvectors in the columns of ``V``.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    A = (A + A.T) / 2
    d = A.shape[0]
    V = np.eye(d)
    scale = np.linalg.norm(A, "fro")
    if d == 1 or scale == 0.0:
        return np.diag(A).copy(), V
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q]
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :]
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def symmetric_eigh(M):
    """Jacobi up to ``JACOBI_MAX_DIM``, LAPACK beyond."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] <= JACOBI_MAX_DIM:
        return jacobi_eigh(M)
    return np.linalg.eigh((M + M.T) / 2)


def inverse_sqrt(M, rel_floor: float = 1e-10) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    w, U = symmetric_eigh(M)
    scale = float(np.abs(w).max())
    if scale == 0.0 or w.min() < rel_floor * scale:
        raise SingularMatrixError(float(w.min()), scale)
    R = (U / np.sqrt(w)) @ U.T
    return (R + R.T) / 2


# ---------------------------------------------------------------------------
# Power iteration


def _as_operator(apply: Operator) -> Callable[[np.ndarray], np.ndarray]:
    if callable(apply):
        return apply
    M = np.asarray(apply, dtype=float)
    return lambda v: M @ v


def _power_run(op, v, tol, max_iter):
    value, residual = 0.0, math.inf
    for it in range(1, max_iter + 1):
        w = op(v)
        value = float(v @ w)
        residual = float(np.linalg.norm(w - value * v))
        if residual <= tol * max(1.0, abs(value)):
            return EigenPair(value, v, it, residual, True)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # v lies in the null space; every vector is an eigenvector of 0
            return EigenPair(0.0, v, it, 0.0, True)
        v = w / norm_w
    w = op(v)
    value = float(v @ w)
    residual = float(np.linalg.norm(w - value * v))
    # report the final iterate: its Rayleigh quotient is the sharpest value estimate
    return EigenPair(value, v, max_iter, residual, False)


def top_eigenpair(
    apply: Operator,
    k: int | None = None,
    tol: float = 1e-7,
    max_iter: int = 1000,
    rng: np.random.Generator | None = None,
    bound: float | None = None,
    psd: bool = False,
) -> EigenPair:
    """Largest-magnitude eigenpair of a symmetric operator by power iteration.

    ``apply`` is a matrix or a matvec callable on R^k. The iteration starts
    from a seeded Gaussian vector. When a negative and a positive eigenvalue
    of (nearly) equal magnitude compete, the plain iteration stalls; it is
    then rerun on ``M + cI`` and ``-M + cI`` with ``c = bound`` (the
    row-sum norm for explicit matrices) and the larger magnitude wins.

    With ``psd=True`` the operator is known to be positive semidefinite, no
    sign competition is possible and the fallback is skipped.

    Raises :class:`ConvergenceError` carrying the best iterate when the
    residual never drops below ``tol * max(1, |value|)``.
    """
    if not callable(apply):
        M = np.asarray(apply, dtype=float)
        k = M.shape[0]
        if bound is None:
            bound = float(np.abs(M).sum(axis=1).max())
    if k is None:
        raise ValueError("k is required for a callable operator")
    op = _as_operator(apply)
    if rng is None:
        rng = np.random.default_rng(0)
    v0 = rng.standard_normal(k)
    v0 /= np.linalg.norm(v0)

    pair = _power_run(op, v0, tol, max_iter)
    if pair.converged:
        return pair
    if psd:
        raise ConvergenceError(pair)

    # a stall means two eigenvalues of nearly equal magnitude compete; shifting
    # by +-c separates them whether they share a sign or not
    w = op(pair.vector)
    c = bound if bound is not None else 2.0 * float(np.linalg.norm(w))
    # the shifted residual is measured against |value| + c, so tighten tol
    shift_tol = tol * max(1.0, abs(pair.value)) / (abs(pair.value) + c)
    candidates = []
    for sign in (1.0, -1.0):
        shifted = _power_run(lambda x, s=sign: s * op(x) + c * x, v0, shift_tol, max_iter)
        vec = shifted.vector
        image = op(vec)
        value = float(vec @ image)
        residual = float(np.linalg.norm(image - value * vec))
        candidates.append(
            EigenPair(value, vec, pair.iterations + shifted.iterations, residual,
                      residual <= tol * max(1.0, abs(value)))
        )
    best = max(candidates, key=lambda p: abs(p.value))
    if best.converged:
        return best
    pair = best
    raise ConvergenceError(pair)


def top_eigenpair_lanczos(
    apply: Operator,
    k: int | None = None,
    tol: float = 1e-7,
    max_iter: int = 1000,
    rng: np.random.Generator | None = None,
    psd: bool = False,
) -> EigenPair:
    """Largest-magnitude eigenpair by implicitly restarted Lanczos (ARPACK).

    Matrix-free like :func:`top_eigenpair` but needs far fewer products when
    the top of the spectrum is crowded. ``psd=True`` asks for the largest
    algebraic eigenvalue. Tiny operators go through power iteration.
    """
    if not callable(apply):
        k = np.asarray(apply).shape[0]
    if k is None:
        raise ValueError("k is required for a callable operator")
    op = _as_operator(apply)
    if rng is None:
        rng = np.random.default_rng(0)
    v0 = rng.standard_normal(k)
    if k <= 2:
        return top_eigenpair(op, k, tol=tol, max_iter=max_iter, rng=np.random.default_rng(0), psd=psd)
    linear = LinearOperator((k, k), matvec=op, dtype=float)
    try:
        vals, vecs = eigsh(linear, k=1, which="LA" if psd else "LM", v0=v0, tol=tol,
                           maxiter=max_iter)
        converged = True
    except ArpackNoConvergence as exc:
        if exc.eigenvalues.size == 0:
            raise ConvergenceError(EigenPair(float("nan"), v0 / np.linalg.norm(v0), max_iter,
                                             float("inf"), False)) from exc
        vals, vecs = exc.eigenvalues, exc.eigenvectors
        converged = False
    v = vecs[:, 0] / np.linalg.norm(vecs[:, 0])
    image = op(v)
    value = float(v @ image)
    residual = float(np.linalg.norm(image - value * v))
    pair = EigenPair(value, v, max_iter, residual, converged)
    if not converged:
        raise ConvergenceError(pair)
    return pair


def top_eigenpair_lenient(apply: Operator, k=None, method: str = "power", **kwargs) -> EigenPair:
    """Like :func:`top_eigenpair` but returns the best iterate instead of raising."""
    solver = top_eigenpair_lanczos if method == "lanczos" else top_eigenpair
    if method == "lanczos":
        kwargs.pop("bound", None)
    try:
        return solver(apply, k, **kwargs)
    except ConvergenceError as exc:
        return exc.best


# ---------------------------------------------------------------------------
# Flatten / sharpen and the fourth-moment operator


def flatten(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return M.reshape(-1).copy()


def sharpen(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    d = math.isqrt(w.size)
    if d * d != w.size:
        raise ValueError(f"length {w.size} is not a perfect square")
    return w.reshape(d, d).copy()


@dataclass(frozen=True)
class FourthMomentOperator:
    """Implicit ``-I♭ I♭ᵀ + (1/n) Σ z_i z_iᵀ`` with ``z_i = y_i ⊗ y_i``.

    ``y`` holds the whitened samples as rows; nothing of size ``d^2 x d^2``
    is ever formed.
    """

    y: np.ndarray

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def k(self) -> int:
        return self.d * self.d

    def quadratic_values(self, W) -> np.ndarray:
        """``y_iᵀ W y_i`` for every sample, i.e. ``z_i · flatten(W)``."""
        return np.einsum("ni,ni->n", self.y @ W, self.y)

    def matvec(self, w) -> np.ndarray:
        W = sharpen(w)
        s = self.quadratic_values(W)
        out = (self.y.T * s) @ self.y / self.y.shape[0]
        out[np.diag_indices(self.d)] -= np.trace(W)
        return out.reshape(-1)

    __call__ = matvec

    def norm_bound(self) -> float:
        sq = np.einsum("ni,ni->n", self.y, self.y)
        return float(np.mean(sq * sq) + self.d)


def fourth_moment_matvec(op: FourthMomentOperator, w) -> np.ndarray:
    return op.matvec(w)


def variance_of_quadratic(M) -> float:
    """Variance of ``(yᵀMy - tr M)/√2`` for ``y ~ N(0, I)``: ``||sym(M)||_F^2``."""
    M = np.asarray(M, dtype=float)
    sym = (M + M.T) / 2
    return float(np.sum(sym * sym))

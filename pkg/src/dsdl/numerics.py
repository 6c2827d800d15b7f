"""Dense float64 matrix helpers and the SPD solver.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
helpers here validate shapes and finiteness so that bad values raise at
the point they appear instead of propagating through training.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class FactorizationError(ArithmeticError):
    """Cholesky factorization failed; ``pivot`` is the 0-based failing index."""

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (failing pivot {pivot})")
        self.pivot = pivot


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array; 1-D input becomes a column."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise ShapeError(f"{name} must have positive dimensions, got {m.shape}")
    return m


def check_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        bad = np.argwhere(~np.isfinite(m))[0]
        raise NonFiniteError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    return m


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    with np.errstate(all="ignore"):
        out = a @ b
    return check_finite(out, "matmul result")


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(a).T)


def add(a, b) -> np.ndarray:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    _same_shape(a, b, "add")
    with np.errstate(all="ignore"):
        out = a + b
    return check_finite(out, "add result")


def sub(a, b) -> np.ndarray:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    _same_shape(a, b, "sub")
    with np.errstate(all="ignore"):
        out = a - b
    return check_finite(out, "sub result")


def scale(a, s: float) -> np.ndarray:
    with np.errstate(all="ignore"):
        out = as_matrix(a) * float(s)
    return check_finite(out, "scale result")


def hadamard(a, b) -> np.ndarray:
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    _same_shape(a, b, "hadamard")
    with np.errstate(all="ignore"):
        out = a * b
    return check_finite(out, "hadamard result")


def sum_all(a) -> float:
    return float(check_finite(np.asarray(as_matrix(a).sum()), "sum"))


def frobenius_norm_sq(a) -> float:
    a = as_matrix(a)
    return float(check_finite(np.asarray(np.vdot(a, a)), "norm"))


class SPDFactor:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Built once and reused for every right-hand side, which is how the
    ridge codes and their backward solves share a single factorization.
    """

    def __init__(self, m):
        m = check_finite(as_matrix(m, "m"), "m")
        n, k = m.shape
        if n != k:
            raise ShapeError(f"solve_spd: matrix must be square, got {m.shape}")
        scale_ = max(float(np.max(np.abs(m))), np.finfo(float).tiny)
        if np.max(np.abs(m - m.T)) > 1e-9 * scale_:
            raise ShapeError("solve_spd: matrix is not symmetric")
        chol, info = dpotrf(m, lower=1, clean=1)
        if info > 0:
            raise FactorizationError(info - 1)
        if info < 0:
            raise ValueError(f"dpotrf: illegal argument {-info}")
        self.lower = chol
        self.n = n

    def solve(self, rhs) -> np.ndarray:
        rhs = as_matrix(rhs, "rhs")
        if rhs.shape[0] != self.n:
            raise ShapeError(f"solve_spd: rhs has {rhs.shape[0]} rows, expected {self.n}")
        x = cho_solve((self.lower, True), rhs, check_finite=False)
        return check_finite(x, "solve_spd result")


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``m @ X = rhs`` for symmetric positive definite ``m`` by Cholesky."""
    return SPDFactor(m).solve(rhs)

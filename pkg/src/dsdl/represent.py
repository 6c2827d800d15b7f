"""Ridge (collaborative) coding of features over a dictionary.

Codes are the minimizers of ``||f - D a||^2 + lam ||a||^2``, i.e.
``a = (D^T D + lam I)^{-1} D^T f``. The backward pass differentiates
through that solve implicitly and reuses the forward Cholesky factor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .diffcore import sigmoid_forward
from .numerics import ShapeError, SPDFactor, as_matrix, check_finite
from .semdict import UndercompleteError


class GradMode(str, enum.Enum):
    FULL = "full"
    DIC_DETACHED = "dic_detached"
    ALL_DETACHED = "all_detached"


@dataclass
class CodeBatch:
    alpha: np.ndarray
    probs: np.ndarray
    factor: SPDFactor
    D: np.ndarray
    F: np.ndarray
    lam: float

    @property
    def residual(self) -> np.ndarray:
        return self.F - self.D @ self.alpha


def solve_codes(D, F, lam: float, *, enforce_undercomplete: bool = True) -> CodeBatch:
    D = check_finite(as_matrix(D, "D"), "D")
    F = check_finite(as_matrix(F, "F"), "F")
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    d, c = D.shape
    if F.shape[0] != d:
        raise ShapeError(f"features have {F.shape[0]} rows, dictionary has {d}")
    if enforce_undercomplete and c >= d:
        raise UndercompleteError(f"{c} atoms >= {d} dimensions")
    gram = D.T @ D
    gram = 0.5 * (gram + gram.T)
    gram[np.diag_indices(c)] += lam
    factor = SPDFactor(gram)
    alpha = factor.solve(D.T @ F)
    return CodeBatch(alpha, sigmoid_forward(alpha), factor, D, F, float(lam))


def predict(D, F, lam: float) -> np.ndarray:
    return solve_codes(D, F, lam).probs


def dictionary_loss(D, F, alpha, lam: float) -> float:
    """Batch mean of ``||f_b - D a_b||^2 + lam ||a_b||^2``."""
    D, F, alpha = as_matrix(D, "D"), as_matrix(F, "F"), as_matrix(alpha, "alpha")
    if D.shape[0] != F.shape[0] or D.shape[1] != alpha.shape[0] or F.shape[1] != alpha.shape[1]:
        raise ShapeError(f"dictionary_loss: D{D.shape} F{F.shape} alpha{alpha.shape}")
    r = F - D @ alpha
    return float((np.sum(r * r) + lam * np.sum(alpha * alpha)) / F.shape[1])


def dictionary_loss_partials(codes: CodeBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of the batch-mean dictionary loss, codes held fixed.

    Returns ``(dD, dF, dalpha)``; ``dalpha`` vanishes up to rounding at the
    ridge optimum.
    """
    B = codes.F.shape[1]
    r = codes.residual
    dD = -2.0 / B * (r @ codes.alpha.T)
    dF = 2.0 / B * r
    dalpha = 2.0 / B * (codes.lam * codes.alpha - codes.D.T @ r)
    return dD, dF, dalpha


def backward_codes(g, mode: GradMode | str, codes: CodeBatch) -> tuple[np.ndarray, np.ndarray]:
    """Pull ``dL/dalpha`` back through the ridge solve to ``(dL/dD, dL/dF)``.

    With ``r = (D^T D + lam I)^{-1} g``: ``dF = D r`` and
    ``dD = (F - D alpha) r^T - D r alpha^T``. ``all_detached`` blocks the
    path entirely.
    """
    if codes is None:
        raise RuntimeError("backward_codes called before solve_codes")
    mode = GradMode(mode)
    g = as_matrix(g, "g")
    if g.shape != codes.alpha.shape:
        raise ShapeError(f"upstream {g.shape} vs codes {codes.alpha.shape}")
    if mode is GradMode.ALL_DETACHED:
        return np.zeros_like(codes.D), np.zeros_like(codes.F)
    r = codes.factor.solve(g)
    Dr = codes.D @ r
    dD = codes.residual @ r.T - Dr @ codes.alpha.T
    return dD, Dr

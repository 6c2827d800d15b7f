"""Semantic dictionary generation with a tied-weight autoencoder.

The encoder maps class embeddings ``S`` (k x c) to dictionary atoms ``D``
(d x c); the decoder runs the same two weight matrices transposed in
reverse order to reconstruct ``S``, and the mean column cosine between
``S`` and its reconstruction scores how much semantics survived.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import FullyConnected, LeakyReLU, ParamStore, Sequential, TiedTransposed
from .numerics import ShapeError, as_matrix, check_finite


class UndercompleteError(ValueError):
    """The dictionary must have fewer atoms than feature dimensions."""


class ZeroNormError(ArithmeticError):
    pass


@dataclass
class SemanticSpace:
    S: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.S = check_finite(as_matrix(self.S, "S"), "S")
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(self.S.shape[1])]
        if len(self.class_names) != self.S.shape[1]:
            raise ShapeError(f"{len(self.class_names)} class names for {self.S.shape[1]} columns")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        norms = np.linalg.norm(self.S, axis=0)
        for i in np.flatnonzero(norms == 0):
            raise ZeroNormError(f"embedding of class {self.class_names[i]!r} is all zeros")

    @property
    def embedding_dim(self) -> int:
        return self.S.shape[0]

    @property
    def num_classes(self) -> int:
        return self.S.shape[1]

    def permuted(self, order) -> "SemanticSpace":
        order = list(order)
        return SemanticSpace(self.S[:, order], [self.class_names[i] for i in order])


class TiedAutoencoder:
    """FC(k->h), LReLU, FC(h->d), LReLU; decoder W2.T, LReLU, W1.T (linear out).

    Encoder layers carry biases, the decoder has none.
    """

    def __init__(self, params: ParamStore, k: int, d: int, hidden: int,
                 rng: np.random.Generator | None = None, slope: float = 0.2,
                 prefix: str = "ae"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.k, self.d, self.hidden = k, d, hidden
        self.fc1 = FullyConnected(params, f"{prefix}.fc1", k, hidden, with_bias=True, rng=rng)
        self.fc2 = FullyConnected(params, f"{prefix}.fc2", hidden, d, with_bias=True, rng=rng)
        self.encoder = Sequential(self.fc1, LeakyReLU(slope), self.fc2, LeakyReLU(slope))
        self.decoder = Sequential(TiedTransposed(self.fc2), LeakyReLU(slope), TiedTransposed(self.fc1))

    def generate_dictionary(self, semantic: SemanticSpace) -> np.ndarray:
        """D = encoder(S); column i is the atom of class i."""
        if semantic.embedding_dim != self.k:
            raise ShapeError(f"embeddings are {semantic.embedding_dim}-d, autoencoder expects {self.k}")
        if semantic.num_classes >= self.d:
            raise UndercompleteError(
                f"{semantic.num_classes} classes >= feature dim {self.d}; dictionary must be undercomplete")
        return check_finite(self.encoder.forward(semantic.S), "dictionary")

    def reconstruct(self, D: np.ndarray) -> np.ndarray:
        return self.decoder.forward(D)


def build_autoencoder(k: int = 300, d: int = 2048, hidden: int = 1024, *,
                      params: ParamStore | None = None,
                      rng: np.random.Generator | None = None) -> tuple[TiedAutoencoder, ParamStore]:
    params = params if params is not None else ParamStore()
    return TiedAutoencoder(params, k, d, hidden, rng=rng), params


def similarity_loss(S: np.ndarray, S_hat: np.ndarray, class_names=None) -> tuple[float, np.ndarray]:
    """Mean column cosine between ``S`` and ``S_hat`` and its gradient w.r.t. ``S_hat``."""
    S = as_matrix(S, "S")
    S_hat = as_matrix(S_hat, "S_hat")
    if S.shape != S_hat.shape:
        raise ShapeError(f"similarity_loss: {S.shape} vs {S_hat.shape}")
    c = S.shape[1]
    ns = np.linalg.norm(S, axis=0)
    nh = np.linalg.norm(S_hat, axis=0)
    for i in np.flatnonzero((nh == 0) | (ns == 0)):
        name = class_names[i] if class_names is not None else str(i)
        raise ZeroNormError(f"zero-norm embedding or reconstruction for class {name!r}")
    cos = np.sum(S * S_hat, axis=0) / (ns * nh)
    grad = (S / (ns * nh) - cos * S_hat / nh**2) / c
    return float(np.clip(cos.mean(), -1.0, 1.0)), grad

"""The full model, its objective, and alternating (APUS) training.

Each training step first codes the batch features over the current
dictionary in closed form, then back-propagates

    L_total = (L_ce + beta * L_dic) / max(L_sim, sim_floor)

into the feature module and autoencoder parameters.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .data import LabeledFeatureSet, to_f32_precision
from .diffcore import FullyConnected, LeakyReLU, ParamStore, Sequential, lr_schedule, sgd_step
from .numerics import FactorizationError, NonFiniteError, ShapeError
from .represent import (GradMode, backward_codes, dictionary_loss,
                        dictionary_loss_partials, solve_codes)
from .semdict import SemanticSpace, TiedAutoencoder, similarity_loss

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}"
                         + (f": {detail}" if detail else ""))
        self.epoch = epoch
        self.batch = batch


@dataclass
class Hyper:
    lam: float = 10.0
    beta: float = 1e-4
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    grad_mode: str = "full"
    sim_floor: float = 1e-3
    lr_step: int = 40
    lr_gamma: float = 0.1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0 < self.sim_floor <= 1:
            raise ValueError("sim_floor must lie in (0, 1]")
        if self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        self.grad_mode = GradMode(self.grad_mode).value


PRESETS = {
    "voc": {"lam": 10.0, "beta": 1e-4},
    "coco": {"lam": 0.1, "beta": 1e-6},
}


@dataclass
class Architecture:
    feature: str = "mlp"
    in_dim: int = 64
    feature_hidden: int = 64
    d: int = 64
    k: int = 16
    ae_hidden: int = 32

    def __post_init__(self):
        if self.feature not in ("mlp", "passthrough"):
            raise ValueError(f"unknown feature module {self.feature!r}")
        if self.feature == "passthrough" and self.in_dim != self.d:
            raise ValueError("passthrough features require in_dim == d")


def coerce_fields(cls, raw: dict[str, str]) -> dict:
    """Parse string values into the field types of dataclass ``cls``."""
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, val in raw.items():
        if key not in types:
            raise KeyError(f"unknown key {key!r}")
        t = types[key]
        out[key] = int(val) if t in (int, "int") else float(val) if t in (float, "float") else val
    return out


class FeatureModule:
    """Stand-in for the CNN backbone: identity, or FC -> LeakyReLU -> FC."""

    def __init__(self, params: ParamStore, arch: Architecture, rng: np.random.Generator):
        self.variant = arch.feature
        self.out_dim = arch.d
        if self.variant == "mlp":
            self.net = Sequential(
                FullyConnected(params, "feat.fc1", arch.in_dim, arch.feature_hidden, rng=rng),
                LeakyReLU(0.2),
                FullyConnected(params, "feat.fc2", arch.feature_hidden, arch.d, rng=rng),
            )
        else:
            self.net = None

    def forward(self, X: np.ndarray) -> np.ndarray:
        if self.net is None:
            if X.shape[0] != self.out_dim:
                raise ShapeError(f"passthrough features are {X.shape[0]}-d, dictionary expects {self.out_dim}")
            return X
        return self.net.forward(X)

    def backward(self, dF: np.ndarray) -> None:
        if self.net is not None:
            self.net.backward(dF)


def ce_loss(alpha, labels) -> tuple[float, np.ndarray]:
    """Binary cross-entropy on sigmoid(alpha), summed over classes and
    averaged over the batch; returns the loss and ``dL/dalpha``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if alpha.shape != y.shape:
        raise ShapeError(f"ce_loss: {alpha.shape} vs {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    B = alpha.shape[1]
    # log(1 + e^a) - y a, written to avoid overflow
    per = np.maximum(alpha, 0.0) - y * alpha + np.log1p(np.exp(-np.abs(alpha)))
    e = np.exp(-np.abs(alpha))
    probs = np.where(alpha >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(per.sum() / B), (probs - y) / B


def total_loss(l_ce: float, l_dic: float, l_sim: float, hyper: Hyper) -> tuple[float, tuple[float, float, float]]:
    """Objective value and its partials w.r.t. (L_ce, L_dic, L_sim)."""
    num = l_ce + hyper.beta * l_dic
    if l_sim > hyper.sim_floor:
        den, d_sim = l_sim, -num / l_sim**2
    else:
        den, d_sim = hyper.sim_floor, 0.0
    return num / den, (1.0 / den, hyper.beta / den, d_sim)


@dataclass
class LossTerms:
    ce: float
    dic: float
    sim: float
    total: float


class DSDLModel:
    def __init__(self, semantic: SemanticSpace, arch: Architecture, hyper: Hyper,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(hyper.seed)
        if semantic.embedding_dim != arch.k:
            raise ShapeError(f"embeddings are {semantic.embedding_dim}-d, architecture says k={arch.k}")
        self.semantic = semantic
        self.arch = arch
        self.hyper = hyper
        self.params = ParamStore()
        self.features = FeatureModule(self.params, arch, rng)
        self.ae = TiedAutoencoder(self.params, arch.k, arch.d, arch.ae_hidden, rng=rng)

    def dictionary(self) -> np.ndarray:
        return self.ae.generate_dictionary(self.semantic)

    def forward_backward(self, X, Y, *, grad: bool = True) -> LossTerms:
        """One APUS step minus the parameter update; grads accumulate into params."""
        hyper = self.hyper
        mode = GradMode(hyper.grad_mode)
        F = self.features.forward(X)
        D = self.dictionary()
        S_hat = self.ae.reconstruct(D)
        l_sim, dsim = similarity_loss(self.semantic.S, S_hat, self.semantic.class_names)
        codes = solve_codes(D, F, hyper.lam)
        l_ce, dce = ce_loss(codes.alpha, Y)
        l_dic = dictionary_loss(D, F, codes.alpha, hyper.lam)
        l_total, (w_ce, w_dic, w_sim) = total_loss(l_ce, l_dic, l_sim, hyper)
        if grad:
            dD_dir, dF_dir, dalpha_dic = dictionary_loss_partials(codes)
            g = w_ce * dce
            if mode is GradMode.FULL:
                g = g + w_dic * dalpha_dic
            dD, dF = backward_codes(g, mode, codes)
            dD = dD + w_dic * dD_dir + self.ae.decoder.backward(w_sim * dsim)
            dF = dF + w_dic * dF_dir
            self.ae.encoder.backward(dD)
            self.features.backward(dF)
        return LossTerms(l_ce, l_dic, l_sim, l_total)

    def predict(self, X) -> np.ndarray:
        return solve_codes(self.dictionary(), self.features.forward(X), self.hyper.lam).probs

    def checkpoint(self, epoch: int) -> "Checkpoint":
        """Freeze parameters (rounded to float32, the on-disk precision)."""
        params = {k: to_f32_precision(v) for k, v in self.params.values().items()}
        self.params.load_values(params)
        D = to_f32_precision(self.dictionary())
        return Checkpoint(params, dataclasses.replace(self.hyper), dataclasses.replace(self.arch),
                          list(self.semantic.class_names), D, epoch)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    hyper: Hyper
    arch: Architecture
    class_names: list[str]
    D: np.ndarray
    epoch: int
    history: list[tuple] = field(default_factory=list, compare=False, repr=False)

    def feature_module(self) -> FeatureModule:
        store = ParamStore()
        fm = FeatureModule(store, self.arch, np.random.default_rng(0))
        store.load_values({k: v for k, v in self.params.items() if k in store})
        return fm

    def predict(self, X) -> np.ndarray:
        F = self.feature_module().forward(np.asarray(X, dtype=np.float64))
        return solve_codes(self.D, F, self.hyper.lam).probs

    def equals(self, other: "Checkpoint") -> bool:
        return (self.hyper == other.hyper and self.arch == other.arch
                and self.class_names == other.class_names and self.epoch == other.epoch
                and np.array_equal(self.D, other.D)
                and self.params.keys() == other.params.keys()
                and all(np.array_equal(v, other.params[k]) for k, v in self.params.items()))


def architecture_for(dataset: LabeledFeatureSet, feature: str = "mlp", **overrides) -> Architecture:
    in_dim = dataset.X.shape[0]
    kw = dict(feature=feature, in_dim=in_dim, d=in_dim, k=dataset.semantic.embedding_dim)
    kw.update(overrides)
    return Architecture(**kw)


def apus_train(dataset: LabeledFeatureSet, semantic: SemanticSpace | None = None,
               hyper: Hyper | None = None, arch: Architecture | None = None) -> Checkpoint:
    """Alternate closed-form coding (forward) and SGD on all parameters (backward).

    The returned checkpoint carries per-epoch means in ``history`` as
    ``(epoch, lr, L_ce, L_dic, L_sim, L_total)`` rows.
    """
    hyper = hyper or Hyper()
    semantic = semantic or dataset.semantic
    arch = arch or architecture_for(dataset)
    if dataset.num_samples == 0:
        raise ValueError("empty dataset")
    if dataset.Y.shape[0] != semantic.num_classes:
        raise ShapeError("label rows do not match the number of classes")
    rng = np.random.default_rng(hyper.seed)
    model = DSDLModel(semantic, arch, hyper, rng)
    model.dictionary()  # undercompleteness and shape checks before any work
    N, B = dataset.num_samples, hyper.batch_size
    history = []
    for epoch in range(hyper.epochs):
        lr = lr_schedule(epoch, hyper.lr0, hyper.lr_step, hyper.lr_gamma)
        order = rng.permutation(N)
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, N, B)):
            idx = order[start:start + B]
            model.params.zero_grads()
            try:
                # overflow surfaces as a non-finite loss or NonFiniteError below
                with np.errstate(over="ignore", invalid="ignore"):
                    terms = model.forward_backward(dataset.X[:, idx], dataset.Y[:, idx])
            except (NonFiniteError, FactorizationError) as exc:
                raise DivergenceError(epoch, b, str(exc)) from exc
            if not np.isfinite(terms.total):
                raise DivergenceError(epoch, b, "non-finite L_total")
            sgd_step(model.params, lr, hyper.momentum, hyper.weight_decay)
            sums += (terms.ce, terms.dic, terms.sim, terms.total)
            n_batches += 1
        means = sums / n_batches
        history.append((epoch, lr, *means))
        log.debug("epoch %d lr %.3g L_ce %.4f L_dic %.4f L_sim %.4f L_total %.4f", epoch, lr, *means)
    ckpt = model.checkpoint(hyper.epochs)
    ckpt.history = history
    return ckpt


def evaluate(checkpoint: Checkpoint, dataset: LabeledFeatureSet, *, eleven_point: bool = False,
             topk: int = 3) -> metrics.MetricReport:
    if dataset.Y.shape[0] != len(checkpoint.class_names):
        raise ShapeError(f"checkpoint has {len(checkpoint.class_names)} classes, "
                         f"dataset has {dataset.Y.shape[0]}")
    probs = checkpoint.predict(dataset.X)
    return metrics.metric_report(probs, dataset.Y, checkpoint.class_names,
                                 topk=topk, eleven_point=eleven_point)


def toy_gradcheck(*, seed: int = 0, grad_mode: str = "full", k: int = 8, hidden: int = 8,
                  d: int = 16, c: int = 4, batch: int = 6, in_dim: int = 10,
                  feature_hidden: int = 8, lam: float = 1.0, beta: float = 0.05,
                  rtol: float = 1e-4, step: float = 1e-5):
    """Central-difference check of every parameter block on a small random instance."""
    from .diffcore import grad_check

    rng = np.random.default_rng(seed)
    semantic = SemanticSpace(rng.normal(size=(k, c)))
    X = rng.normal(size=(in_dim, batch))
    Y = (rng.random((c, batch)) < 0.4).astype(float)
    arch = Architecture("mlp", in_dim=in_dim, feature_hidden=feature_hidden, d=d, k=k, ae_hidden=hidden)
    hyper = Hyper(lam=lam, beta=beta, grad_mode=grad_mode, seed=seed)
    model = DSDLModel(semantic, arch, hyper, rng)
    # nonzero biases so the bias gradients are exercised away from zero
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.value[...] = rng.normal(scale=0.1, size=p.value.shape)
    return grad_check(lambda: model.forward_backward(X, Y).total, model.params, rtol=rtol, step=step)

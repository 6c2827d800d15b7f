"""Datasets, file formats and the planted-model generator.

On-disk formats
---------------
FMAT
    ``b"FMAT"``, then little-endian u32 version (1), rows, cols, then
    ``rows * cols`` little-endian float32 values in row-major order.
    Feature files store one sample per row (``N x d``); in memory features
    are ``d x N``.
labels CSV
    header ``id,<class_1>,...,<class_c>``, one row per sample with 0/1 cells.
embeddings
    GloVe text: ``token v_1 ... v_k`` per line, UTF-8.
checkpoint
    a directory holding ``manifest.txt`` and one FMAT per tensor.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import as_matrix
from .semdict import SemanticSpace, UndercompleteError

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class DataError(ValueError):
    """Malformed input file."""


@dataclass
class LabeledFeatureSet:
    X: np.ndarray
    Y: np.ndarray
    ids: list[str]
    semantic: SemanticSpace
    empty_label_count: int = field(init=False)

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2 or not np.isin(self.Y, (0.0, 1.0)).all():
            raise DataError("labels must be a 2-D 0/1 matrix")
        n = self.X.shape[1]
        if self.Y.shape[1] != n or len(self.ids) != n:
            raise DataError(f"{n} samples but {self.Y.shape[1]} label columns and {len(self.ids)} ids")
        if self.Y.shape[0] != self.semantic.num_classes:
            raise DataError(f"{self.Y.shape[0]} label rows for {self.semantic.num_classes} classes")
        self.empty_label_count = int((self.Y.sum(axis=0) == 0).sum())

    @property
    def num_samples(self) -> int:
        return self.X.shape[1]

    @property
    def class_names(self) -> list[str]:
        return self.semantic.class_names

    def subset(self, idx) -> "LabeledFeatureSet":
        idx = np.asarray(idx)
        return LabeledFeatureSet(self.X[:, idx], self.Y[:, idx],
                                 [self.ids[i] for i in idx], self.semantic)


# -- FMAT ---------------------------------------------------------------

def save_fmat(matrix, path) -> None:
    m = as_matrix(matrix)
    if not np.all(np.isfinite(m)):
        raise DataError("refusing to write non-finite values")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FMAT_MAGIC, FMAT_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def decode_fmat(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise DataError(f"{source}: size mismatch, {len(raw)} bytes is shorter than the header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != FMAT_MAGIC:
        raise DataError(f"{source}: bad magic {magic!r}")
    if version != FMAT_VERSION:
        raise DataError(f"{source}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise DataError(f"{source}: size mismatch, header declares {rows}x{cols} "
                        f"({expected} bytes) but file has {len(raw)}")
    if rows == 0 or cols == 0:
        raise DataError(f"{source}: empty matrix {rows}x{cols}")
    m = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise DataError(f"{source}: non-finite payload value")
    return m


def load_fmat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_fmat(fh.read(), str(path))


def save_features(X, path) -> None:
    save_fmat(as_matrix(X).T, path)


def load_features(path) -> np.ndarray:
    return np.ascontiguousarray(load_fmat(path).T)


def to_f32_precision(a) -> np.ndarray:
    """Round to the nearest float32 value, kept as float64."""
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


# -- embeddings ---------------------------------------------------------

def _read_glove(path) -> dict[str, np.ndarray]:
    vectors: dict[str, np.ndarray] = {}
    k = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            token, vals = parts[0], parts[1:]
            if k is None:
                k = len(vals)
                if k == 0:
                    raise DataError(f"{path}:{lineno}: no vector values")
            elif len(vals) != k:
                raise DataError(f"{path}:{lineno}: expected {k} values, found {len(vals)}")
            try:
                vec = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            vectors.setdefault(token, vec)
    if k is None:
        raise DataError(f"{path}: no embeddings")
    return vectors


def load_glove(path, class_names) -> SemanticSpace:
    """Embeddings for each class; multi-word names average their words."""
    vectors = _read_glove(path)
    cols, missing = [], []
    for name in class_names:
        words = name.split()
        absent = [w for w in words if w not in vectors]
        if absent or not words:
            missing.append(f"{name!r} (missing {', '.join(absent) or 'empty name'})")
            continue
        cols.append(np.mean([vectors[w] for w in words], axis=0))
    if missing:
        raise DataError(f"{path}: no embedding for class(es) {'; '.join(missing)}")
    return SemanticSpace(np.stack(cols, axis=1), list(class_names))


def save_glove(vectors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token, vec in vectors.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in np.ravel(vec)) + "\n")


# -- labels -------------------------------------------------------------

def read_label_classes(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[0] != "id" or len(header) < 2:
        raise DataError(f"{path}: header must start with 'id' followed by class names")
    return header[1:]


def load_labels(path, class_names=None) -> tuple[np.ndarray, list[str]]:
    """Read a labels CSV into a ``c x N`` 0/1 matrix and the sample ids."""
    file_classes = read_label_classes(path)
    if class_names is not None and list(class_names) != file_classes:
        raise DataError(f"{path}: class order {file_classes} does not match expected {list(class_names)}")
    c = len(file_classes)
    rows, ids = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rowno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != c + 1:
                raise DataError(f"{path}: row {rowno} has {len(row)} columns, expected {c + 1}")
            vals = []
            for cell in row[1:]:
                if cell.strip() not in ("0", "1"):
                    raise DataError(f"{path}: row {rowno} has non-binary value {cell!r}")
                vals.append(int(cell))
            ids.append(row[0])
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no samples")
    return np.array(rows, dtype=np.float64).T, ids


def save_labels(Y, ids, class_names, path) -> None:
    Y = np.asarray(Y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *class_names])
        for j, sid in enumerate(ids):
            w.writerow([sid, *(int(v) for v in Y[:, j])])


def load_dataset(features_path, labels_path, embeddings_path) -> LabeledFeatureSet:
    classes = read_label_classes(labels_path)
    Y, ids = load_labels(labels_path, classes)
    X = load_features(features_path)
    semantic = load_glove(embeddings_path, classes)
    return LabeledFeatureSet(X, Y, ids, semantic)


# -- planted model ------------------------------------------------------

@dataclass
class PlantedData:
    train: LabeledFeatureSet
    test: LabeledFeatureSet | None
    D_star: np.ndarray
    S_star: np.ndarray
    alpha_train: np.ndarray
    alpha_test: np.ndarray | None


def _planted_split(rng, D_star, c, n, noise_sigma, prefix):
    Y = np.zeros((c, n))
    for j in range(n):
        y = rng.random(c) < 0.3
        while not y.any():
            y = rng.random(c) < 0.3
        Y[:, j] = y
    pos = rng.uniform(2.0, 4.0, size=(c, n))
    neg = rng.uniform(-0.3, 0.3, size=(c, n))
    alpha = np.where(Y > 0, pos, neg)
    F = D_star @ alpha + rng.normal(0.0, noise_sigma, size=(D_star.shape[0], n))
    ids = [f"{prefix}{j:05d}" for j in range(n)]
    return to_f32_precision(F), Y, ids, alpha


def synth_generate(d: int, c: int, N: int, seed: int, noise_sigma: float = 0.05, *,
                   k: int = 16, n_holdout: int = 0) -> PlantedData:
    """Planted dictionary model: ``f = D* a* + noise`` with labels read off ``a*``.

    ``D*`` has orthonormal columns, positives get codes in (2, 4) and
    negatives in (-0.3, 0.3). ``S*`` is an unrelated Gaussian embedding
    matrix; learning the map from ``S*`` to ``D*`` is the training task.
    Matrices are rounded to float32 so memory matches what gets written.
    """
    if c >= d:
        raise UndercompleteError(f"c={c} must be smaller than d={d}")
    if N <= 0:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(d, c)))
    D_star = q * np.sign(np.diag(r))
    S_star = to_f32_precision(rng.normal(size=(k, c)))
    names = [f"class{i}" for i in range(c)]
    semantic = SemanticSpace(S_star, names)
    F, Y, ids, alpha = _planted_split(rng, D_star, c, N, noise_sigma, "train")
    train = LabeledFeatureSet(F, Y, ids, semantic)
    test = alpha_test = None
    if n_holdout:
        Ft, Yt, idt, alpha_test = _planted_split(rng, D_star, c, n_holdout, noise_sigma, "test")
        test = LabeledFeatureSet(Ft, Yt, idt, semantic)
    return PlantedData(train, test, to_f32_precision(D_star), S_star, alpha, alpha_test)


def write_planted(data: PlantedData, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "embeddings": out / "embeddings.txt",
        "train_features": out / "train_features.fmat",
        "train_labels": out / "train_labels.csv",
        "planted_dictionary": out / "planted_dictionary.fmat",
        "planted_semantic": out / "planted_semantic.fmat",
    }
    sem = data.train.semantic
    save_glove({n: sem.S[:, i] for i, n in enumerate(sem.class_names)}, paths["embeddings"])
    save_features(data.train.X, paths["train_features"])
    save_labels(data.train.Y, data.train.ids, sem.class_names, paths["train_labels"])
    save_fmat(data.D_star, paths["planted_dictionary"])
    save_fmat(data.S_star, paths["planted_semantic"])
    if data.test is not None:
        paths["test_features"] = out / "test_features.fmat"
        paths["test_labels"] = out / "test_labels.csv"
        save_features(data.test.X, paths["test_features"])
        save_labels(data.test.Y, data.test.ids, sem.class_names, paths["test_labels"])
    return paths


# -- checkpoints & curves -------------------------------------------------

MANIFEST = "manifest.txt"


def _safe_filename(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name) + ".fmat"


def save_checkpoint(ckpt, directory) -> Path:
    """Write ``manifest.txt`` plus one FMAT per tensor.

    Manifest lines: ``epoch N``, ``hyper KEY VALUE``, ``arch KEY VALUE``,
    ``class INDEX NAME`` and ``tensor NAME ROWSxCOLS FILE``.
    """
    from dataclasses import asdict

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# dsdl checkpoint v1", f"epoch {ckpt.epoch}"]
    for key, val in asdict(ckpt.hyper).items():
        lines.append(f"hyper {key} {val!r}" if isinstance(val, float) else f"hyper {key} {val}")
    for key, val in asdict(ckpt.arch).items():
        lines.append(f"arch {key} {val}")
    lines += [f"class {i} {name}" for i, name in enumerate(ckpt.class_names)]
    tensors = dict(ckpt.params)
    tensors["dictionary"] = ckpt.D
    for name, value in tensors.items():
        fname = _safe_filename(name)
        save_fmat(value, out / fname)
        lines.append(f"tensor {name} {value.shape[0]}x{value.shape[1]} {fname}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def load_checkpoint(directory):
    from .model import Architecture, Checkpoint, Hyper, coerce_fields

    root = Path(directory)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"{manifest} not found")
    epoch, hyper, arch, classes, tensors = None, {}, {}, {}, {}
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        kind, _, rest = line.partition(" ")
        try:
            if kind == "epoch":
                epoch = int(rest)
            elif kind in ("hyper", "arch"):
                key, _, val = rest.partition(" ")
                (hyper if kind == "hyper" else arch)[key] = val
            elif kind == "class":
                idx, _, name = rest.partition(" ")
                classes[int(idx)] = name
            elif kind == "tensor":
                name, shape, fname = rest.split(" ")
                rows, cols = (int(v) for v in shape.split("x"))
                value = load_fmat(root / fname)
                if value.shape != (rows, cols):
                    raise DataError(f"{fname}: shape {value.shape} != manifest {rows}x{cols}")
                tensors[name] = value
            else:
                raise DataError(f"unknown entry {kind!r}")
        except (ValueError, KeyError) as exc:
            raise DataError(f"{manifest}:{lineno}: {exc}") from None
    if epoch is None or "dictionary" not in tensors:
        raise DataError(f"{manifest}: incomplete checkpoint")
    D = tensors.pop("dictionary")
    return Checkpoint(
        params=tensors,
        hyper=Hyper(**coerce_fields(Hyper, hyper)),
        arch=Architecture(**coerce_fields(Architecture, arch)),
        class_names=[classes[i] for i in range(len(classes))],
        D=D,
        epoch=epoch,
    )


CURVE_COLUMNS = ("epoch", "lr", "L_ce", "L_dic", "L_sim", "L_total")


def write_curve(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)

"""Multi-label evaluation: per-class AP, mAP and the overall / per-class
precision, recall and F1 under top-k or threshold label assignment.

Score and label matrices are ``c x N`` (classes by samples).
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np


class UndefinedAPWarning(UserWarning):
    pass


def _ranking(scores: np.ndarray) -> np.ndarray:
    # descending score, ties by original index ascending
    return np.lexsort((np.arange(scores.size), -scores))


def average_precision(scores, relevance, *, eleven_point: bool = False) -> float:
    """All-points AP: mean of precision at the rank of each positive.

    ``eleven_point=True`` gives the interpolated VOC2007 variant instead.
    Returns ``nan`` when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    rel = np.asarray(relevance).ravel().astype(bool)
    if scores.shape != rel.shape:
        raise ValueError(f"{scores.size} scores for {rel.size} labels")
    n_pos = int(rel.sum())
    if n_pos == 0:
        return float("nan")
    hits = rel[_ranking(scores)]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    if not eleven_point:
        return float(precision[hits].sum() / n_pos)
    recall = tp / n_pos
    ap = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        ok = recall >= t
        ap += precision[ok].max() if ok.any() else 0.0
    return float(ap / 11.0)


def assign_topk(probs, k: int = 3) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    c, n = probs.shape
    if not 0 <= k <= c:
        raise ValueError(f"k={k} must lie in [0, {c}]")
    out = np.zeros((c, n), dtype=np.int64)
    # stable sort on -p keeps lower class index first among ties
    order = np.argsort(-probs, axis=0, kind="stable")[:k]
    np.put_along_axis(out, order, 1, axis=0)
    return out


def assign_threshold(probs, t: float = 0.5) -> np.ndarray:
    return (np.asarray(probs) > t).astype(np.int64)


@dataclass
class PRF:
    OP: float
    OR: float
    OF1: float
    CP: float
    CR: float
    CF1: float
    n_correct: np.ndarray
    n_predicted: np.ndarray
    n_truth: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("OP", "OR", "OF1", "CP", "CR", "CF1")}


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def prf_suite(assigned, truth) -> PRF:
    """Overall and per-class precision / recall / F1.

    A class with no predicted (or no true) positives contributes 0 to the
    per-class precision (recall) average.
    """
    a = np.asarray(assigned).astype(bool)
    y = np.asarray(truth).astype(bool)
    if a.shape != y.shape:
        raise ValueError(f"assigned {a.shape} vs truth {y.shape}")
    nt = (a & y).sum(axis=1)
    np_ = a.sum(axis=1)
    ng = y.sum(axis=1)
    OP = nt.sum() / np_.sum() if np_.sum() else 0.0
    OR = nt.sum() / ng.sum() if ng.sum() else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        cp = np.where(np_ > 0, nt / np.maximum(np_, 1), 0.0)
        cr = np.where(ng > 0, nt / np.maximum(ng, 1), 0.0)
    CP, CR = float(cp.mean()), float(cr.mean())
    OP, OR = float(OP), float(OR)
    return PRF(OP, OR, _f1(OP, OR), CP, CR, _f1(CP, CR), nt, np_, ng)


@dataclass
class MetricReport:
    class_names: list[str]
    per_class_ap: np.ndarray
    map: float
    policies: dict[str, PRF] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "name", "value"])
        w.writerow(["summary", "mAP", repr(self.map)])
        for name, ap in zip(self.class_names, self.per_class_ap):
            w.writerow(["ap", name, repr(float(ap))])
        for policy, prf in self.policies.items():
            for k, v in prf.as_dict().items():
                w.writerow([policy, k, repr(v)])
            for i, name in enumerate(self.class_names):
                w.writerow([policy, f"counts:{name}",
                            f"{prf.n_correct[i]}/{prf.n_predicted[i]}/{prf.n_truth[i]}"])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max(8, max(len(n) for n in self.class_names))
        lines = [f"{'class':<{width}s}  {'AP':>7s}"]
        for name, ap in zip(self.class_names, self.per_class_ap):
            lines.append(f"{name:<{width}s}  {ap:7.4f}")
        lines.append(f"{'mAP':<{width}s}  {self.map:7.4f}")
        lines.append("")
        keys = ("OP", "OR", "OF1", "CP", "CR", "CF1")
        lines.append(f"{'policy':<{width}s}  " + "  ".join(f"{k:>7s}" for k in keys))
        for policy, prf in self.policies.items():
            vals = prf.as_dict()
            lines.append(f"{policy:<{width}s}  " + "  ".join(f"{vals[k]:7.4f}" for k in keys))
        return "\n".join(lines)


def mean_average_precision(scores, truth, *, eleven_point: bool = False) -> tuple[np.ndarray, float]:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    aps = np.array([average_precision(scores[j], truth[j], eleven_point=eleven_point)
                    for j in range(scores.shape[0])])
    undefined = np.isnan(aps)
    if undefined.any():
        warnings.warn(f"{int(undefined.sum())} class(es) without positives excluded from mAP",
                      UndefinedAPWarning, stacklevel=2)
    if undefined.all():
        return aps, float("nan")
    return aps, float(aps[~undefined].mean())


def metric_report(probs, truth, class_names=None, *, topk: int = 3, threshold: float = 0.5,
                  eleven_point: bool = False) -> MetricReport:
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth)
    if probs.shape != truth.shape:
        raise ValueError(f"scores {probs.shape} vs labels {truth.shape}")
    c = probs.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(c)]
    aps, m = mean_average_precision(probs, truth, eleven_point=eleven_point)
    k = min(topk, c)
    policies = {
        "threshold": prf_suite(assign_threshold(probs, threshold), truth),
        f"top{k}": prf_suite(assign_topk(probs, k), truth),
    }
    return MetricReport(names, aps, m, policies)

"""Segmentation metrics: confusion matrix, per-class IoU / precision / recall.

A class mapping folds prediction (or ground-truth) labels onto evaluation
classes before counting; the main use is folding an imprinted class back onto
its semantic parent so a C+1-class model is scored on the original C classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidInput


@dataclass
class ConfusionMatrix:
    """counts[g, p] = pixels with ground truth g predicted as p (after mapping)."""

    counts: np.ndarray
    class_names: Optional[list[str]] = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.counts.shape != self.counts.shape:
            raise InvalidInput("confusion matrices disagree on class count")
        return ConfusionMatrix(self.counts + other.counts, self.class_names)


@dataclass
class MetricsReport:
    """Per-class IoU / precision / recall (None where 0/0) and their mean IoU."""

    iou: list[Optional[float]]
    precision: list[Optional[float]]
    recall: list[Optional[float]]
    mean_iou: float
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "iou": self.iou,
            "precision": self.precision,
            "recall": self.recall,
            "mean_iou": self.mean_iou,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(iou=list(d["iou"]), precision=list(d["precision"]), recall=list(d["recall"]),
                   mean_iou=d["mean_iou"], class_names=list(d.get("class_names", [])))


def _apply_mapping(labels: np.ndarray, num_classes: int,
                   mapping: Optional[Mapping[int, int]]) -> np.ndarray:
    mapping = mapping or {}
    values = np.unique(labels)
    lut = np.arange(int(values.max()) + 1 if values.size else 1, dtype=np.int64)
    for src, dst in mapping.items():
        if src < lut.size:
            lut[src] = dst
    mapped_values = lut[values]
    bad = values[(mapped_values < 0) | (mapped_values >= num_classes)]
    if bad.size:
        raise InvalidInput(f"labels {bad.tolist()} not mapped into [0, {num_classes})")
    return lut[labels]


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int,
              mapping: Optional[Mapping[int, int]] = None,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    """Count (gt, pred) pairs after folding labels through `mapping`.

    Labels not in the mapping map to themselves; any label that ends up
    outside [0, num_classes) is an error.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInput(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    if num_classes < 1:
        raise InvalidInput("need at least one evaluation class")
    p = _apply_mapping(pred.reshape(-1), num_classes, mapping)
    g = _apply_mapping(gt.reshape(-1), num_classes, mapping)
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    counts = counts.reshape(num_classes, num_classes)
    return ConfusionMatrix(counts=counts, class_names=list(class_names) if class_names else None)


def metrics(conf: ConfusionMatrix) -> MetricsReport:
    """IoU = TP/(TP+FP+FN), precision = TP/(TP+FP), recall = TP/(TP+FN).

    0/0 cases are reported as None and excluded from the mean IoU.
    """
    c = conf.counts
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp

    def ratio(num, den):
        return [float(n) / float(d) if d > 0 else None for n, d in zip(num, den)]

    iou = ratio(tp, tp + fp + fn)
    defined = [x for x in iou if x is not None]
    names = conf.class_names or [f"class{j}" for j in range(c.shape[0])]
    return MetricsReport(
        iou=iou,
        precision=ratio(tp, tp + fp),
        recall=ratio(tp, tp + fn),
        mean_iou=float(np.mean(defined)) if defined else float("nan"),
        class_names=names,
    )

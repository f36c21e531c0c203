"""Fine-tuning baseline: cross entropy on pseudo-labels plus output-level
distillation against the frozen pre-trained teacher.

Pseudo-labels are the teacher's own predictions with every interaction-mask
pixel forced to the plant class (the task refines the existing plant class,
so the full interaction mask is used, not the prediction-filtered one). The
distillation term is KL(teacher_T || student_T) at temperature T, so it is
exactly zero while student equals teacher. The whole network is optimized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import counters
from .errors import InvalidInput, NumericalFailure
from .metrics import confusion, metrics
from .model import (
    NORM_EPS,
    SegModel,
    _accumulate,
    _backward,
    _forward,
    _softmax_ce,
    cosine_logits,
    extract_features,
    predict,
)


@dataclass
class DistillConfig:
    distill_weight: float = 0.5
    temperature: float = 1.0
    lr: float = 1e-4
    batch: int = 5
    epochs: int = 15

    def __post_init__(self):
        # distill_weight 0 is allowed: it degenerates to plain CE fine-tuning
        if self.distill_weight < 0:
            raise InvalidInput("distill_weight must be non-negative")
        if self.temperature <= 0 or self.lr <= 0:
            raise InvalidInput("temperature and lr must be positive")
        if self.batch < 1 or self.epochs < 1:
            raise InvalidInput("batch and epochs must be at least 1")


def distill_batch_gradients(model: SegModel, teacher: SegModel,
                            images: Sequence[np.ndarray], pseudo: Sequence[np.ndarray],
                            cfg: DistillConfig):
    """Combined CE + weighted KL loss over the batch and its gradients."""
    head = model.head
    s, temp, w_kd = head.scale, cfg.temperature, cfg.distill_weight
    total_px = sum(int(p.size) for p in pseudo)
    inv = 1.0 / total_px
    loss = 0.0
    pgrads = None
    wgrad = np.zeros_like(head.weights)
    for img, lab in zip(images, pseudo):
        cache = _forward(img, model.extractor)
        feats = cache["feats"]
        z = s * (feats @ head.weights.T)
        ce, p_student = _softmax_ce(z, lab)
        t_feats = extract_features(img, teacher.extractor)
        zt = teacher.head.scale * cosine_logits(t_feats, teacher.head)
        _, p_teacher = _softmax_ce(zt / temp, lab)  # labels unused for the probabilities
        _, p_soft = _softmax_ce(z / temp, lab)
        logratio = np.log(np.maximum(p_teacher, 1e-30)) - np.log(np.maximum(p_soft, 1e-30))
        kl = (p_teacher * logratio).sum(axis=-1)
        loss += float(ce.sum() + w_kd * kl.sum()) * inv

        dz = p_student.copy()
        np.put_along_axis(dz, lab[..., None],
                          np.take_along_axis(dz, lab[..., None], axis=-1) - 1.0, axis=-1)
        dz += (w_kd / temp) * (p_soft - p_teacher)
        dz *= inv
        dscores = dz * s
        dfeats = dscores @ head.weights
        wgrad += dscores.reshape(-1, head.class_count).T @ feats.reshape(-1, head.dim)
        pgrads = _accumulate(pgrads, _backward(cache, dfeats, model.extractor))
    return loss, pgrads, wgrad


def pseudo_labels(teacher: SegModel, images: Sequence[np.ndarray],
                  interaction_masks: Sequence[np.ndarray], plant_class: int) -> list[np.ndarray]:
    out = []
    for img, mask in zip(images, interaction_masks):
        lab = predict(cosine_logits(extract_features(img, teacher.extractor), teacher.head))
        lab = lab.copy()
        lab[mask.astype(bool)] = plant_class
        out.append(lab)
    return out


def distill_finetune(model: SegModel, support_images: Sequence[np.ndarray],
                     interaction_masks: Sequence[np.ndarray], cfg: DistillConfig,
                     val_scenes: Optional[Sequence[tuple[np.ndarray, np.ndarray]]] = None,
                     plant_class: int = 0) -> tuple[SegModel, list[float]]:
    """Fine-tune a copy of `model`; returns the best-validation-epoch weights.

    `val_scenes` are (image, labels) pairs scored by mean IoU after every
    epoch; without them the final epoch wins.
    """
    if len(support_images) == 0 or len(support_images) != len(interaction_masks):
        raise InvalidInput("need matching non-empty images and interaction masks")
    teacher = model.copy()
    student = model.copy()
    pseudo = pseudo_labels(teacher, support_images, interaction_masks, plant_class)
    order = np.arange(len(support_images))
    history: list[float] = []
    best = (-math.inf, student.copy())
    for _ in range(cfg.epochs):
        for start in range(0, len(order), cfg.batch):
            sel = order[start:start + cfg.batch]
            loss, pgrads, wgrad = distill_batch_gradients(
                student, teacher, [support_images[i] for i in sel], [pseudo[i] for i in sel], cfg)
            if not math.isfinite(loss):
                raise NumericalFailure("non-finite distillation loss")
            p = student.extractor
            for name, g in pgrads.items():
                arr = getattr(p, name)
                arr -= cfg.lr * g
            w = student.head.weights
            w -= cfg.lr * wgrad
            w /= np.maximum(np.linalg.norm(w, axis=1, keepdims=True), NORM_EPS)
            counters.incr("gradient_steps")
        if val_scenes:
            conf = None
            k = student.head.class_count
            for img, labels in val_scenes:
                pred = predict(cosine_logits(extract_features(img, student.extractor), student.head))
                c = confusion(pred, labels, k, mapping=student.head.fold_mapping())
                conf = c if conf is None else conf.merged(c)
            miou = metrics(conf).mean_iou
        else:
            miou = float(len(history))  # no validation: last epoch wins
        history.append(miou)
        if miou > best[0]:
            best = (miou, student.copy())
    return best[1], history

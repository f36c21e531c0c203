"""Class-prototype pooling over training masks and classifier weight grafting.

Two pooling variants: plain masked average pooling (MAP), and robust average
pooling (RAP) which re-weights each masked embedding by its clipped cosine
similarity to the MAP center before averaging, suppressing mask outliers.
The normalized prototype is installed directly as the weight row of a new
class; no gradient computation is involved anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegeneratePrototype, EmptyMask, InvalidInput
from .model import NORM_EPS, CosineClassifier, FeatureMap

MAP = "map"
RAP = "rap"


@dataclass
class SupportSet:
    """Few-shot refinement input: N (image, binary mask) pairs."""

    pairs: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if len(self.pairs) < 1:
            raise InvalidInput("support set needs at least one (image, mask) pair")
        total = 0
        for img, mask in self.pairs:
            if img.shape[:2] != mask.shape:
                raise InvalidInput(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
            total += int(np.count_nonzero(mask))
        if total == 0:
            raise EmptyMask("no mask pixel set anywhere in the support set")

    @property
    def count(self) -> int:
        return len(self.pairs)


@dataclass
class PooledPrototype:
    """Pooled class prototype, raw and L2-normalized, plus diagnostics."""

    raw: np.ndarray
    normalized: np.ndarray
    method: str
    pixel_weights: Optional[list[np.ndarray]] = None  # per-map v values under the mask


def _check_pooling_args(features: Sequence[FeatureMap], masks: Sequence[np.ndarray]) -> float:
    if len(features) == 0 or len(features) != len(masks):
        raise InvalidInput("features and masks must be equal-length non-empty lists")
    total = 0.0
    for fm, mask in zip(features, masks):
        if mask.shape != (fm.height, fm.width):
            raise InvalidInput(f"mask shape {mask.shape} != feature map {(fm.height, fm.width)}")
        total += float(np.count_nonzero(mask))
    if total == 0:
        raise EmptyMask("all masks are empty")
    return total


def _normalize(raw: np.ndarray, method: str) -> np.ndarray:
    norm = float(np.linalg.norm(raw))
    if norm < NORM_EPS:
        raise DegeneratePrototype(f"{method} prototype norm {norm:.3e} is below {NORM_EPS:.0e}")
    return raw / norm


def masked_average_pool(features: Sequence[FeatureMap], masks: Sequence[np.ndarray]) -> PooledPrototype:
    """Uniform average of embeddings under the masks, then L2-normalized."""
    total = _check_pooling_args(features, masks)
    raw = np.zeros(features[0].dim)
    for fm, mask in zip(features, masks):
        m = (mask != 0).astype(np.float64)
        raw += np.einsum("hw,hwd->d", m, fm.data)
    raw /= total
    return PooledPrototype(raw=raw, normalized=_normalize(raw, MAP), method=MAP)


def robust_average_pool(features: Sequence[FeatureMap], masks: Sequence[np.ndarray]) -> PooledPrototype:
    """Masked average re-weighted by clipped cosine similarity to the MAP center.

    Weights are v = max(0, x . x_map_hat): embeddings pointing away from the
    distribution center contribute nothing. The denominator stays the plain
    mask count, as the final normalization makes it irrelevant.
    """
    total = _check_pooling_args(features, masks)
    center = masked_average_pool(features, masks).normalized
    raw = np.zeros(features[0].dim)
    weights = []
    for fm, mask in zip(features, masks):
        m = (mask != 0).astype(np.float64)
        v = np.maximum(fm.data @ center, 0.0)
        weights.append(v * m)
        raw += np.einsum("hw,hwd->d", v * m, fm.data)
    raw /= total
    return PooledPrototype(raw=raw, normalized=_normalize(raw, RAP), method=RAP,
                           pixel_weights=weights)


def pool(features: Sequence[FeatureMap], masks: Sequence[np.ndarray], method: str) -> PooledPrototype:
    if method == MAP:
        return masked_average_pool(features, masks)
    if method == RAP:
        return robust_average_pool(features, masks)
    raise InvalidInput(f"unknown pooling method {method!r}")


def imprint(head: CosineClassifier, prototype: PooledPrototype, parent_class: int) -> CosineClassifier:
    """New classifier with the prototype grafted as class C.

    The input head is never mutated; rows 0..C-1 of the result are
    bit-identical copies. The new class records its semantic parent so
    evaluation can fold its predictions back.
    """
    if prototype.normalized.shape != (head.dim,):
        raise InvalidInput(f"prototype dim {prototype.normalized.shape} != head dim {head.dim}")
    if not 0 <= parent_class < head.class_count:
        raise InvalidInput(f"parent class {parent_class} out of range")
    new_index = head.class_count
    weights = np.vstack([head.weights, prototype.normalized[None, :]])
    names = list(head.class_names) + [f"{head.class_names[parent_class]}+imp{new_index}"]
    parents = dict(head.parents)
    parents[new_index] = parent_class
    return CosineClassifier(weights=weights, margin=head.margin, scale=head.scale,
                            class_names=names, parents=parents)

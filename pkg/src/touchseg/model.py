"""Pixel-wise embedding extractor and L2-normalized cosine classification head.

The extractor is a small per-pixel MLP (RGB + normalized pixel coordinates in,
D-channel embedding out) followed by a fixed box blur for spatial context and
per-pixel L2 normalization. Classification scores are cosine similarities
against unit-norm class weight rows; training minimizes an additive
angular-margin softmax loss with hand-rolled gradients (no autograd).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import counters
from .errors import InvalidInput, NumericalFailure

NORM_EPS = 1e-12


@dataclass
class ExtractorParams:
    """Weights of the per-pixel feature MLP plus the blur configuration.

    Layers: input (5 = RGB + 2 normalized coordinates) -> hidden -> hidden
    -> dim, tanh on the hidden layers, linear output. `blur_radius` selects
    the (2r+1)^2 box window applied to the raw embeddings before
    normalization.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    blur_radius: int = 1

    IN_CHANNELS = 5

    @classmethod
    def init(cls, seed: int, hidden: int = 32, dim: int = 16, blur_radius: int = 1) -> "ExtractorParams":
        """Seeded init. Coordinate input columns start at zero so a fresh
        extractor is appearance-only (positional cues are learned, not baked
        in); this keeps a fresh extractor translation-invariant."""
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.0 / math.sqrt(cls.IN_CHANNELS), (cls.IN_CHANNELS, hidden))
        w1[3:, :] = 0.0
        w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, hidden))
        w3 = rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, dim))
        return cls(
            w1=w1, b1=np.zeros(hidden),
            w2=w2, b2=np.zeros(hidden),
            w3=w3, b3=np.zeros(dim),
            blur_radius=blur_radius,
        )

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def dim(self) -> int:
        return self.w3.shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in the canonical (checkpoint) order."""
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def copy(self) -> "ExtractorParams":
        return ExtractorParams(*(a.copy() for a in self.arrays()), blur_radius=self.blur_radius)


@dataclass
class FeatureMap:
    """H x W grid of unit-norm D-dimensional pixel embeddings."""

    data: np.ndarray  # (H, W, D), every pixel vector L2-normalized

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass
class CosineClassifier:
    """Unit-norm class weight rows plus angular-margin loss parameters.

    `parents` records, for classes added by imprinting, the pre-trained class
    each one refines; evaluation folds their predictions back onto the parent.
    """

    weights: np.ndarray  # (C, D), unit rows
    margin: float = 0.1
    scale: float = 16.0
    class_names: list[str] = field(default_factory=list)
    parents: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise InvalidInput("classifier weights must be a (C, D) matrix with C >= 2")
        if not (0.0 <= self.margin <= 0.5):
            raise InvalidInput(f"margin must be in [0, 0.5], got {self.margin}")
        if not self.scale > 0:
            raise InvalidInput(f"scale must be positive, got {self.scale}")
        if not self.class_names:
            self.class_names = [f"class{j}" for j in range(self.weights.shape[0])]
        if len(self.class_names) != self.weights.shape[0]:
            raise InvalidInput("class_names length must match weight rows")

    @classmethod
    def init(cls, seed: int, class_count: int, dim: int, margin: float = 0.1,
             scale: float = 16.0, class_names: Optional[Sequence[str]] = None) -> "CosineClassifier":
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(class_count, dim))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        names = list(class_names) if class_names is not None else None
        return cls(weights=w, margin=margin, scale=scale,
                   class_names=names or [f"class{j}" for j in range(class_count)])

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def fold_mapping(self) -> dict[int, int]:
        """Class mapping that folds every imprinted class onto its parent."""
        return dict(self.parents)

    def copy(self) -> "CosineClassifier":
        return CosineClassifier(weights=self.weights.copy(), margin=self.margin,
                                scale=self.scale, class_names=list(self.class_names),
                                parents=dict(self.parents))


@dataclass
class SegModel:
    """Extractor plus classification head; the unit the CLI checkpoints."""

    extractor: ExtractorParams
    head: CosineClassifier

    def copy(self) -> "SegModel":
        return SegModel(self.extractor.copy(), self.head.copy())


@dataclass
class LossReport:
    loss: float
    labels: Optional[np.ndarray]
    grad_norms: Optional[dict[str, float]] = None


def _box_blur(x: np.ndarray, radius: int) -> np.ndarray:
    """Zero-padded box filter normalized by the full window area.

    The resulting linear operator is symmetric, so it serves as its own
    transpose in the backward pass.
    """
    if radius == 0:
        return x.copy()
    h, w, d = x.shape
    k = 2 * radius + 1
    padded = np.zeros((h + 2 * radius, w + 2 * radius, d), dtype=x.dtype)
    padded[radius:radius + h, radius:radius + w] = x
    c = padded.cumsum(axis=0).cumsum(axis=1)
    c = np.pad(c, ((1, 0), (1, 0), (0, 0)))
    return (c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]) / float(k * k)


def _coord_channels(h: int, w: int, box: Optional[tuple[int, int, int, int]] = None) -> np.ndarray:
    """(h, w, 2) normalized pixel coordinates in [-0.5, 0.5].

    `box` = (row0, col0, full_h, full_w) evaluates the coordinates a crop
    would have inside its full image.
    """
    r0, c0, fh, fw = box if box is not None else (0, 0, h, w)
    rows = (np.arange(r0, r0 + h, dtype=np.float64) / max(fh - 1, 1)) - 0.5
    cols = (np.arange(c0, c0 + w, dtype=np.float64) / max(fw - 1, 1)) - 0.5
    cc, rr = np.meshgrid(cols, rows)
    return np.stack([rr, cc], axis=-1)


def _forward(image: np.ndarray, params: ExtractorParams,
             coord_box: Optional[tuple[int, int, int, int]] = None) -> dict:
    """Full forward pass returning every intermediate needed for backprop."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInput(f"expected (H, W, 3) RGB image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h == 0 or w == 0:
        raise InvalidInput("zero-sized image")
    x = np.concatenate([img.astype(np.float64) / 255.0, _coord_channels(h, w, coord_box)], axis=-1)
    x = x.reshape(h * w, ExtractorParams.IN_CHANNELS)
    a1 = x @ params.w1 + params.b1
    z1 = np.tanh(a1)
    a2 = z1 @ params.w2 + params.b2
    z2 = np.tanh(a2)
    u = (z2 @ params.w3 + params.b3).reshape(h, w, params.dim)
    g = _box_blur(u, params.blur_radius)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    safe = np.maximum(norms, NORM_EPS)
    feats = g / safe
    counters.incr("forward_passes")
    return {"x": x, "z1": z1, "z2": z2, "g": g, "safe_norms": safe, "feats": feats}


def extract_features(image: np.ndarray, params: ExtractorParams) -> FeatureMap:
    """Per-pixel unit-norm embeddings for an (H, W, 3) RGB image."""
    return FeatureMap(data=_forward(image, params)["feats"])


def cosine_logits(features: FeatureMap, head: CosineClassifier) -> np.ndarray:
    """(H, W, C) cosine similarity of every pixel embedding to every class row."""
    if features.dim != head.dim:
        raise InvalidInput(f"feature dim {features.dim} != classifier dim {head.dim}")
    return features.data @ head.weights.T


def predict(scores: np.ndarray) -> np.ndarray:
    """Per-pixel argmax class; ties resolve to the lowest class index."""
    return np.argmax(scores, axis=-1)


def _margin_logits(scores: np.ndarray, labels: np.ndarray, margin: float, scale: float):
    """Scaled logits with the additive angular margin applied on the label
    class, plus d(cos(theta+m))/d(cos theta) there for the backward pass.

    cos(theta+m) is computed through theta = arccos(clip(cos, -1, 1)); past
    theta + m = pi it clamps to cos(pi) so the penalty stays monotone.
    """
    cy = np.take_along_axis(scores, labels[..., None], axis=-1)[..., 0]
    if margin == 0.0:
        phi, dphi = cy, np.ones_like(cy)
    else:
        cyc = np.clip(cy, -1.0, 1.0)
        theta = np.arccos(cyc)
        over = theta + margin >= math.pi
        phi = np.where(over, -1.0, np.cos(theta + margin))
        sin_theta = np.maximum(np.sin(theta), NORM_EPS)
        dphi = np.where(over, 0.0, np.sin(theta + margin) / sin_theta)
    z = scale * scores.copy()
    np.put_along_axis(z, labels[..., None], (scale * phi)[..., None], axis=-1)
    return z, dphi


def _softmax_ce(z: np.ndarray, labels: np.ndarray):
    """Per-pixel cross entropy on logits z plus the softmax probabilities."""
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=-1, keepdims=True)
    p = ez / sez
    lse = np.log(sez[..., 0]) + zmax[..., 0]
    zy = np.take_along_axis(z, labels[..., None], axis=-1)[..., 0]
    return lse - zy, p


def arcface_loss(scores: np.ndarray, labels: np.ndarray, head: CosineClassifier) -> LossReport:
    """Mean angular-margin softmax loss over pixels.

    With margin 0 this reduces exactly to softmax cross entropy on
    scale * scores.
    """
    labels = np.asarray(labels)
    if scores.shape[:-1] != labels.shape:
        raise InvalidInput("scores and labels disagree on pixel grid shape")
    if labels.size and (labels.min() < 0 or labels.max() >= head.class_count):
        raise InvalidInput("label out of range")
    z, _ = _margin_logits(scores, labels, head.margin, head.scale)
    per_pixel, _ = _softmax_ce(z, labels)
    return LossReport(loss=float(per_pixel.mean()), labels=labels)


def _loss_grad_wrt_scores(scores: np.ndarray, labels: np.ndarray, margin: float,
                          scale: float, inv_count: float):
    """Loss contribution and dL/d(cosine scores) for one image.

    `inv_count` is 1/total-pixel-count of the batch so per-image results sum
    to the batch mean.
    """
    z, dphi = _margin_logits(scores, labels, margin, scale)
    per_pixel, p = _softmax_ce(z, labels)
    dz = p.copy()
    np.put_along_axis(
        dz, labels[..., None],
        np.take_along_axis(dz, labels[..., None], axis=-1) - 1.0, axis=-1)
    dz *= inv_count
    dscores = dz * scale
    ys = labels[..., None]
    np.put_along_axis(dscores, ys, np.take_along_axis(dscores, ys, axis=-1) * dphi[..., None], axis=-1)
    return float(per_pixel.sum()) * inv_count, dscores


def _backward(cache: dict, dfeats: np.ndarray, params: ExtractorParams) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. extractor parameters given dL/d(features)."""
    feats, safe = cache["feats"], cache["safe_norms"]
    dg = (dfeats - (dfeats * feats).sum(axis=-1, keepdims=True) * feats) / safe
    du = _box_blur(dg, params.blur_radius).reshape(-1, params.dim)
    z1, z2, x = cache["z1"], cache["z2"], cache["x"]
    grads = {"w3": z2.T @ du, "b3": du.sum(axis=0)}
    da2 = (du @ params.w3.T) * (1.0 - z2 * z2)
    grads["w2"] = z1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ params.w2.T) * (1.0 - z1 * z1)
    grads["w1"] = x.T @ da1
    grads["b1"] = da1.sum(axis=0)
    counters.incr("backward_passes")
    return grads


def _accumulate(total: Optional[dict], part: dict) -> dict:
    if total is None:
        return part
    for k, v in part.items():
        total[k] += v
    return total


def batch_gradients(images: Sequence[np.ndarray], labels: Sequence[np.ndarray],
                    model: SegModel, coord_boxes: Optional[Sequence] = None):
    """Mean loss over every pixel of the batch and its gradients.

    Returns (loss, extractor grads dict, head weight grads (C, D)).
    """
    if len(images) == 0:
        raise InvalidInput("empty batch")
    if len(images) != len(labels):
        raise InvalidInput("images and labels length mismatch")
    total_px = sum(int(np.asarray(lm).size) for lm in labels)
    inv = 1.0 / total_px
    head = model.head
    loss = 0.0
    pgrads = None
    wgrad = np.zeros_like(head.weights)
    for i, (img, lm) in enumerate(zip(images, labels)):
        lm = np.asarray(lm)
        if lm.size and (lm.min() < 0 or lm.max() >= head.class_count):
            raise InvalidInput("label out of range")
        cache = _forward(img, model.extractor, None if coord_boxes is None else coord_boxes[i])
        feats = cache["feats"]
        scores = feats @ head.weights.T
        part_loss, dscores = _loss_grad_wrt_scores(scores, lm, head.margin, head.scale, inv)
        loss += part_loss
        dfeats = dscores @ head.weights
        wgrad += dscores.reshape(-1, head.class_count).T @ feats.reshape(-1, head.dim)
        pgrads = _accumulate(pgrads, _backward(cache, dfeats, model.extractor))
    return loss, pgrads, wgrad


def train_step(images: Sequence[np.ndarray], labels: Sequence[np.ndarray],
               model: SegModel, lr: float,
               coord_boxes: Optional[Sequence] = None) -> tuple[SegModel, LossReport]:
    """One full-gradient descent step on the batch; classifier rows are
    re-projected to the unit sphere afterwards. Mutates `model` in place."""
    if lr < 0:
        raise InvalidInput("learning rate must be non-negative")
    loss, pgrads, wgrad = batch_gradients(images, labels, model, coord_boxes)
    if not math.isfinite(loss):
        raise NumericalFailure(f"non-finite loss {loss}")
    norms = {f"extractor.{k}": float(np.linalg.norm(v)) for k, v in pgrads.items()}
    norms["head.weights"] = float(np.linalg.norm(wgrad))
    if lr > 0:
        if not all(np.isfinite(v).all() for v in pgrads.values()) or not np.isfinite(wgrad).all():
            raise NumericalFailure("non-finite gradient")
        p = model.extractor
        for name, g in pgrads.items():
            arr = getattr(p, name)
            arr -= lr * g
        w = model.head.weights
        w -= lr * wgrad
        w /= np.maximum(np.linalg.norm(w, axis=1, keepdims=True), NORM_EPS)
        counters.incr("gradient_steps")
    report = LossReport(loss=loss, labels=np.asarray(labels[0]) if len(labels) == 1 else None,
                        grad_norms=norms)
    return model, report


@dataclass
class PretrainConfig:
    margin: float = 0.1
    scale: float = 16.0
    lr: float = 0.5
    epochs: int = 120
    seed: int = 0
    hidden: int = 32
    dim: int = 16
    blur_radius: int = 1
    crop: int = 48  # training crop side; 0 trains on full images
    class_names: tuple[str, ...] = ("plant", "artificial", "ground")


def pretrain(dataset: Sequence[tuple[np.ndarray, np.ndarray]],
             config: PretrainConfig) -> tuple[SegModel, list[float]]:
    """Train extractor and head from scratch on (image, label-map) pairs.

    Each epoch takes one gradient step on a seeded random crop per scene
    (full images when config.crop == 0). Deterministic for a given seed.
    Returns the model and the per-epoch loss curve.
    """
    if len(dataset) == 0:
        raise InvalidInput("empty dataset")
    class_count = len(config.class_names)
    present = np.unique(np.concatenate([np.unique(lm) for _, lm in dataset]))
    if present.size < class_count:
        raise InvalidInput(f"dataset covers {present.size} classes, need ≥ {class_count}")
    rng = np.random.default_rng(config.seed)
    extractor = ExtractorParams.init(
        int(rng.integers(2**31)), hidden=config.hidden, dim=config.dim, blur_radius=config.blur_radius)
    head = CosineClassifier.init(
        int(rng.integers(2**31)), class_count, config.dim,
        margin=config.margin, scale=config.scale, class_names=config.class_names)
    model = SegModel(extractor, head)
    r = config.blur_radius
    losses = []
    for _ in range(config.epochs):
        images, labels, boxes = [], [], []
        for img, lm in dataset:
            h, w = lm.shape
            if config.crop and config.crop + 2 * r < min(h, w):
                side = config.crop + 2 * r
                r0 = int(rng.integers(0, h - side + 1))
                c0 = int(rng.integers(0, w - side + 1))
                images.append(img[r0:r0 + side, c0:c0 + side])
                labels.append(lm[r0 + r:r0 + side - r, c0 + r:c0 + side - r])
                boxes.append((r0, c0, h, w))
            else:
                images.append(img)
                labels.append(lm)
                boxes.append(None)
        if any(b is not None for b in boxes):
            # crop training computes the loss on the interior whose blur
            # window lies fully inside the crop, so features match the
            # full-image forward exactly
            loss, pgrads, wgrad = _crop_step(images, labels, boxes, model, r)
        else:
            loss, pgrads, wgrad = batch_gradients(images, labels, model, boxes)
        if not math.isfinite(loss):
            raise NumericalFailure(f"non-finite loss at epoch {len(losses)}")
        p = model.extractor
        for name, g in pgrads.items():
            arr = getattr(p, name)
            arr -= config.lr * g
        w = model.head.weights
        w -= config.lr * wgrad
        w /= np.maximum(np.linalg.norm(w, axis=1, keepdims=True), NORM_EPS)
        counters.incr("gradient_steps")
        losses.append(loss)
    return model, losses


def _crop_step(images, labels, boxes, model: SegModel, r: int):
    """batch_gradients over expanded crops, scoring only the trimmed interior."""
    head = model.head
    total_px = sum(int(lm.size) for lm in labels)
    inv = 1.0 / total_px
    loss = 0.0
    pgrads = None
    wgrad = np.zeros_like(head.weights)
    for img, lm, box in zip(images, labels, boxes):
        cache = _forward(img, model.extractor, box)
        feats = cache["feats"]
        interior = (slice(r, feats.shape[0] - r), slice(r, feats.shape[1] - r)) if r else (slice(None), slice(None))
        fi = feats[interior]
        scores = fi @ head.weights.T
        part_loss, dscores = _loss_grad_wrt_scores(scores, lm, head.margin, head.scale, inv)
        loss += part_loss
        dfeats = np.zeros_like(feats)
        dfeats[interior] = dscores @ head.weights
        wgrad += dscores.reshape(-1, head.class_count).T @ fi.reshape(-1, head.dim)
        pgrads = _accumulate(pgrads, _backward(cache, dfeats, model.extractor))
    return loss, pgrads, wgrad

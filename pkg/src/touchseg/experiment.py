"""Experiment harnesses: the four-method refinement comparison and the
angular-margin sweep, at desk scale on synthetic scenes.

Methods compared: Before (pre-trained model as is), MD (distillation
fine-tuning), WI-MAP and WI-RAP (weight imprinting with plain / robust
pooling). Timing and backward-pass counters are recorded per method so the
cost asymmetry between imprinting and fine-tuning is part of the report.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import counters
from .distill import DistillConfig, distill_finetune
from .errors import DegeneratePrototype, EmptyMask, InvalidInput, TouchsegError
from .geometry import filter_training_mask, frame_interaction_mask, temporal_or
from .imprinting import imprint, pool
from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics
from .model import (
    PretrainConfig,
    SegModel,
    cosine_logits,
    extract_features,
    predict,
    pretrain,
)
from .synthetic import (
    CLASS_NAMES,
    PLANT,
    SceneSpec,
    SyntheticScene,
    generate_scene,
    mark_trajectory,
    noisy_depth_frames,
    simulate_touch,
)

METHODS = ("Before", "MD", "WI-MAP", "WI-RAP")

# palette for prediction PNGs; the imprinted class gets its own hue so
# qualitative output shows where the new prototype fires
PALETTE = {0: (60, 170, 70), 1: (120, 130, 200), 2: (150, 110, 70), 3: (230, 220, 70)}


def experiment_scene_spec() -> SceneSpec:
    """World used by the desk-scale experiments: weedy ground and varied bush
    colors so the pre-trained model has realistic false positives."""
    return SceneSpec(
        bushes_per_row=6,
        bush_radius=(0.09, 0.13),
        withheld_fraction=0.45,
        bush_color_jitter=0.08,
        post_count=5,
        weed_threshold=0.9,
        weed_strength=0.8,
        ground_moss_amp=0.2,
        depth_sigma=0.015,
    )


@dataclass
class ExperimentConfig:
    seed: int = 0
    scenes: int = 12  # pre-training scenes
    support_count: int = 5
    test_count: int = 15
    margin: float = 0.1
    scale: float = 4.0
    lr: float = 0.3
    epochs: int = 120
    blur_radius: int = 2
    strokes: int = 45
    withheld_bias: float = 0.8
    scene_spec: SceneSpec = field(default_factory=experiment_scene_spec)
    distill: DistillConfig = field(default_factory=DistillConfig)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(margin=self.margin, scale=self.scale, lr=self.lr,
                              epochs=self.epochs, seed=self.seed,
                              blur_radius=self.blur_radius, class_names=CLASS_NAMES)


@dataclass
class MethodResult:
    metrics: MetricsReport
    elapsed_ms: float
    backward_passes: int
    gradient_steps: int

    def to_dict(self) -> dict:
        return {"metrics": self.metrics.to_dict(), "elapsed_ms": self.elapsed_ms,
                "backward_passes": self.backward_passes, "gradient_steps": self.gradient_steps}


@dataclass
class ExperimentReport:
    rows: dict[str, MethodResult]
    config_seed: int
    mask_stats: dict

    def to_dict(self) -> dict:
        return {"seed": self.config_seed, "mask_stats": self.mask_stats,
                "rows": {k: v.to_dict() for k, v in self.rows.items()}}

    def to_text(self) -> str:
        lines = ["Per-class and mean IoU (percent)",
                 f"{'':18s}{'Plant':>9s}{'Artificial':>12s}{'Ground':>9s}{'mIoU':>9s}"]
        for name in METHODS:
            if name not in self.rows:
                continue
            m = self.rows[name].metrics
            cells = "".join(f"{100 * v:9.2f}" if v is not None else f"{'n/a':>9s}" for v in m.iou)
            pad = "   " if len(m.iou) < 4 else ""
            lines.append(f"{name:18s}{cells}{pad}{100 * m.mean_iou:9.2f}")
        lines.append("")
        lines.append("Recall / precision (percent)")
        lines.append(f"{'':18s}{'Plant':>16s}{'Artificial':>16s}{'Ground':>16s}")
        for name in METHODS:
            if name not in self.rows:
                continue
            m = self.rows[name].metrics

            def cell(r, p):
                rs = f"{100 * r:.2f}" if r is not None else "n/a"
                ps = f"{100 * p:.2f}" if p is not None else "n/a"
                return f"{rs + ' / ' + ps:>16s}"

            lines.append(f"{name:18s}" + "".join(cell(r, p) for r, p in
                                                 zip(m.recall[:3], m.precision[:3])))
        lines.append("")
        lines.append("Cost")
        for name in METHODS:
            if name not in self.rows:
                continue
            r = self.rows[name]
            lines.append(f"{name:18s} {r.elapsed_ms:10.1f} ms   backward passes: "
                         f"{r.backward_passes:5d}   gradient steps: {r.gradient_steps:4d}")
        return "\n".join(lines)


def evaluate_on(model: SegModel, scenes: list[SyntheticScene],
                fold: Optional[dict[int, int]] = None) -> MetricsReport:
    """Aggregate confusion over the scenes, then metrics (gt labels)."""
    conf: Optional[ConfusionMatrix] = None
    for s in scenes:
        pred = predict(cosine_logits(extract_features(s.rgb, model.extractor), model.head))
        c = confusion(pred, s.gt_labels, len(CLASS_NAMES), mapping=fold, class_names=CLASS_NAMES)
        conf = c if conf is None else conf.merged(c)
    return metrics(conf)


def build_support_masks(model: SegModel, support: list[SyntheticScene], cfg: ExperimentConfig):
    """The data-collection pipeline per support scene: touch, sphere-mark,
    five noisy frames, OR, prediction filter. Returns interaction masks M'
    and training masks M plus bookkeeping."""
    m_primes, train_masks = [], []
    stats = {"mask_pixels": 0, "nonplant_pixels": 0, "interaction_pixels": 0}
    for i, scene in enumerate(support):
        grid = scene.spec.voxel_grid()
        traj = simulate_touch(scene, grid, seed=cfg.seed * 997 + 500 + i, strokes=cfg.strokes,
                              withheld_bias=cfg.withheld_bias)
        mark_trajectory(grid, traj)
        frames = noisy_depth_frames(scene, seed=cfg.seed * 991 + 700 + i)
        fmasks = [frame_interaction_mask(d, scene.intrinsics, scene.camera_pose, grid)
                  for d in frames]
        m_prime = temporal_or(fmasks)
        pred = predict(cosine_logits(extract_features(scene.rgb, model.extractor), model.head))
        m = filter_training_mask(m_prime, pred, PLANT)
        m_primes.append(m_prime)
        train_masks.append(m)
        stats["interaction_pixels"] += int(m_prime.sum())
        stats["mask_pixels"] += int(m.sum())
        stats["nonplant_pixels"] += int((scene.gt_labels[m] != PLANT).sum())
    return m_primes, train_masks, stats


def _timed_method(fn):
    before = counters.snapshot()
    t0 = time.perf_counter()
    result = fn()
    elapsed = (time.perf_counter() - t0) * 1000.0
    d = counters.delta(before)
    return result, elapsed, d.get("backward_passes", 0), d.get("gradient_steps", 0)


@contextmanager
def _stage(name: str):
    """Re-raise pipeline failures with the failing stage named."""
    try:
        yield
    except TouchsegError as e:
        raise type(e)(f"stage {name!r}: {e}") from e


def generate_experiment_scenes(cfg: ExperimentConfig):
    spec = cfg.scene_spec
    train = [generate_scene(cfg.seed * 10_000 + 1000 + i, spec)[0] for i in range(cfg.scenes)]
    support = [generate_scene(cfg.seed * 10_000 + 2000 + i, spec)[0] for i in range(cfg.support_count)]
    test = [generate_scene(cfg.seed * 10_000 + 3000 + i, spec)[0] for i in range(cfg.test_count)]
    return train, support, test


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str | Path] = None,
                   model: Optional[SegModel] = None,
                   prebuilt=None) -> ExperimentReport:
    """End-to-end comparison; deterministic per cfg.seed.

    `model` / `prebuilt` let the margin sweep reuse scenes across margins.
    """
    if cfg.support_count < 1 or cfg.test_count < 1 or cfg.scenes < 2:
        raise InvalidInput("experiment needs scenes, support and test counts >= 1")
    with _stage("scene-generation"):
        train, support, test = prebuilt if prebuilt is not None else generate_experiment_scenes(cfg)
    if model is None:
        with _stage("pretrain"):
            model, _ = pretrain([(s.rgb, s.train_labels) for s in train], cfg.pretrain_config())

    rows: dict[str, MethodResult] = {}
    rep, ms, bwd, steps = _timed_method(lambda: evaluate_on(model, test))
    rows["Before"] = MethodResult(rep, ms, bwd, steps)

    # data collection is shared by every refinement method and not charged
    # to any of them
    with _stage("data-collection"):
        m_primes, train_masks, mask_stats = build_support_masks(model, support, cfg)
    images = [s.rgb for s in support]

    val_count = max(1, len(train) // 5)
    val = [(s.rgb, s.gt_labels) for s in train[-val_count:]]

    def run_md():
        student, _ = distill_finetune(model, images, m_primes, cfg.distill,
                                      val_scenes=val, plant_class=PLANT)
        return student

    with _stage("distill-finetune"):
        student, ms, bwd, steps = _timed_method(run_md)
    rows["MD"] = MethodResult(evaluate_on(student, test), ms, bwd, steps)

    imprinted = {}
    for method in ("map", "rap"):
        def run_wi(method=method):
            feats = [extract_features(img, model.extractor) for img in images]
            proto = pool(feats, train_masks, method)
            return SegModel(model.extractor, imprint(model.head, proto, PLANT))

        with _stage(f"imprint-{method}"):
            refined, ms, bwd, steps = _timed_method(run_wi)
        fold = refined.head.fold_mapping()
        rows[f"WI-{method.upper()}"] = MethodResult(evaluate_on(refined, test, fold), ms, bwd, steps)
        imprinted[method] = refined

    report = ExperimentReport(rows=rows, config_seed=cfg.seed, mask_stats=mask_stats)
    if out_dir is not None:
        _write_outputs(Path(out_dir), report, test,
                       {"Before": model, "MD": student,
                        "WI-MAP": imprinted["map"], "WI-RAP": imprinted["rap"]})
    return report


def _write_outputs(out: Path, report: ExperimentReport, test: list[SyntheticScene],
                   models: dict[str, SegModel]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    (out / "report.txt").write_text(report.to_text() + "\n")
    lut = np.zeros((max(PALETTE) + 1, 3), dtype=np.uint8)
    for k, rgb in PALETTE.items():
        lut[k] = rgb
    for name, m in models.items():
        fold = m.head.fold_mapping()
        for i, s in enumerate(test[:3]):  # a few qualitative examples suffice
            pred = predict(cosine_logits(extract_features(s.rgb, m.extractor), m.head))
            img = lut[np.minimum(pred, len(lut) - 1)]
            Image.fromarray(img).save(out / f"pred_{name.replace(' ', '')}_{i}.png")
            if name == "Before":
                Image.fromarray(s.rgb).save(out / f"rgb_{i}.png")


DEFAULT_MARGINS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class SweepReport:
    margins: list[float]
    mean_iou: dict[str, list[float]]  # rows Before / WI-MAP / WI-RAP

    def to_dict(self) -> dict:
        return {"margins": self.margins, "mean_iou": self.mean_iou}

    def to_text(self) -> str:
        rows = ["Mean IoU (percent) vs pre-training angular margin",
                "m      " + "".join(f"{m:8.1f}" for m in self.margins)]
        for name in ("Before", "WI-MAP", "WI-RAP"):
            rows.append(f"{name:7s}" + "".join(f"{100 * v:8.2f}" for v in self.mean_iou[name]))
        return "\n".join(rows)


def margin_sweep(cfg: ExperimentConfig, margins=DEFAULT_MARGINS) -> SweepReport:
    """Re-pretrain per margin on the same scenes and compare imprinting."""
    scenes = generate_experiment_scenes(cfg)
    train, support, test = scenes
    result = {"Before": [], "WI-MAP": [], "WI-RAP": []}
    for m in margins:
        mcfg = replace(cfg, margin=m)
        model, _ = pretrain([(s.rgb, s.train_labels) for s in train], mcfg.pretrain_config())
        before_miou = evaluate_on(model, test).mean_iou
        result["Before"].append(before_miou)
        _, train_masks, _ = build_support_masks(model, support, mcfg)
        feats = [extract_features(s.rgb, model.extractor) for s in support]
        for method in ("map", "rap"):
            # a margin can degrade the model until no touch survives the
            # prediction filter; the cell then reports the unrefined model
            try:
                refined = SegModel(model.extractor,
                                   imprint(model.head, pool(feats, train_masks, method), PLANT))
                miou = evaluate_on(refined, test, refined.head.fold_mapping()).mean_iou
            except (EmptyMask, DegeneratePrototype):
                miou = before_miou
            result[f"WI-{method.upper()}"].append(miou)
    return SweepReport(margins=list(margins), mean_iou=result)

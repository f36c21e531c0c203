"""Interactive refinement session: stroke accumulation, mask preview,
imprinting, reset.

A session owns one model plus per-scene interaction state (voxel grid, fixed
five-frame noisy depth buffer, current interaction mask). Mutating calls are
serialized by a lock; reads see immutable snapshots. No code path here
computes gradients.
"""

from __future__ import annotations

import threading
import time
import uuid
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyMask, InvalidInput
from .geometry import (
    TOUCH_RADIUS,
    VoxelGrid,
    filter_training_mask,
    frame_interaction_mask,
    mark_interacted,
    temporal_or,
)
from .imprinting import pool, imprint
from .metrics import MetricsReport
from .model import SegModel, cosine_logits, extract_features, predict
from .experiment import evaluate_on
from .synthetic import PLANT, SyntheticScene, noisy_depth_frames


@dataclass
class SceneInteraction:
    grid: VoxelGrid
    frames: list[np.ndarray]  # session-fixed noisy depth buffer (5 frames)
    m_prime: np.ndarray
    stroke_points: int = 0


@dataclass
class StrokeResult:
    m_prime: np.ndarray
    pixel_count: int
    skipped: list[dict]


class Session:
    """One model, one human, any number of scenes."""

    def __init__(self, model: SegModel, scenes: dict[str, SyntheticScene],
                 plant_class: int = PLANT, session_id: Optional[str] = None,
                 frame_seed: int = 0):
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self._pristine = model.copy()
        self.model = model.copy()
        self.scenes = dict(scenes)
        self.plant_class = plant_class
        self._frame_seed = frame_seed
        self._interactions: dict[str, SceneInteraction] = {}
        self._lock = threading.Lock()
        self._test_scenes = list(self.scenes.values())
        self._initial_metrics = evaluate_on(self._pristine, self._test_scenes)
        self._current_metrics = self._initial_metrics

    # -- reads ------------------------------------------------------------

    @property
    def initial_metrics(self) -> MetricsReport:
        return self._initial_metrics

    def metrics(self) -> MetricsReport:
        return self._current_metrics

    def interaction_mask(self, scene_id: str) -> Optional[np.ndarray]:
        inter = self._interactions.get(scene_id)
        return None if inter is None else inter.m_prime

    # -- mutations ---------------------------------------------------------

    def _interaction(self, scene_id: str) -> SceneInteraction:
        if scene_id not in self.scenes:
            raise InvalidInput(f"unknown scene {scene_id!r}")
        if scene_id not in self._interactions:
            scene = self.scenes[scene_id]
            seed = self._frame_seed * 1009 + zlib.crc32(scene_id.encode()) % 100_000
            self._interactions[scene_id] = SceneInteraction(
                grid=scene.spec.voxel_grid(),
                frames=noisy_depth_frames(scene, seed=seed),
                m_prime=np.zeros(scene.depth.shape, dtype=bool),
            )
        return self._interactions[scene_id]

    def apply_stroke(self, scene_id: str, points: list[tuple[float, float]],
                     radius: float = TOUCH_RADIUS) -> StrokeResult:
        """Deproject stroke points through the scene depth, sphere-mark the
        grid and refresh the five-frame interaction mask.

        Points outside the image raise; points on invalid depth are skipped
        and reported.
        """
        with self._lock:
            inter = self._interaction(scene_id)
            scene = self.scenes[scene_id]
            h, w = scene.depth.shape
            skipped = []
            rot, t = scene.camera_pose[:3, :3], scene.camera_pose[:3, 3]
            intr = scene.intrinsics
            for x, y in points:
                if not (0 <= x < w and 0 <= y < h):
                    raise InvalidInput(f"stroke point ({x}, {y}) outside image {w}x{h}")
                u, v = int(x), int(y)
                z = scene.depth[v, u]
                if z <= 0:
                    skipped.append({"x": x, "y": y, "reason": "invalid depth"})
                    continue
                cam = np.array([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])
                mark_interacted(inter.grid, rot @ cam + t, radius)
                inter.stroke_points += 1
            masks = [frame_interaction_mask(d, intr, scene.camera_pose, inter.grid)
                     for d in inter.frames]
            inter.m_prime = temporal_or(masks)
            return StrokeResult(m_prime=inter.m_prime, pixel_count=int(inter.m_prime.sum()),
                                skipped=skipped)

    def imprint(self, method: str) -> dict:
        """Pool over every stroked scene's training mask and graft the new
        class; returns before/after metrics. Forward passes only."""
        with self._lock:
            t0 = time.perf_counter()
            feats, masks = [], []
            for scene_id, inter in self._interactions.items():
                if not inter.m_prime.any():
                    continue
                scene = self.scenes[scene_id]
                fm = extract_features(scene.rgb, self.model.extractor)
                pred = predict(cosine_logits(fm, self.model.head))
                m = filter_training_mask(inter.m_prime, pred, self.plant_class)
                if m.any():
                    feats.append(fm)
                    masks.append(m)
            if not feats:
                raise EmptyMask(
                    "no training-mask pixel survives: strokes fell on regions "
                    "not currently predicted as plant; stroke misclassified "
                    "plant regions near correctly recognized ones")
            proto = pool(feats, masks, method)
            self.model = SegModel(self.model.extractor,
                                  imprint(self.model.head, proto, self.plant_class))
            after = evaluate_on(self.model, self._test_scenes, self.model.head.fold_mapping())
            self._current_metrics = after
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
            return {"before": self._initial_metrics, "after": after, "elapsed_ms": elapsed_ms}

    def reset(self) -> None:
        """Restore the pristine checkpoint bit-identically and drop strokes."""
        with self._lock:
            self.model = self._pristine.copy()
            self._interactions.clear()
            self._current_metrics = self._initial_metrics

    def predicted_labels(self, scene_id: str) -> np.ndarray:
        if scene_id not in self.scenes:
            raise InvalidInput(f"unknown scene {scene_id!r}")
        scene = self.scenes[scene_id]
        fm = extract_features(scene.rgb, self.model.extractor)
        return predict(cosine_logits(fm, self.model.head))

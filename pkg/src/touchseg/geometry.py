"""RGB-D interaction geometry: deprojection, voxel sphere marking, and the
interaction-mask pipeline (per-frame masks, five-frame OR, prediction filter).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInput

TEMPORAL_FRAMES = 5
TOUCH_RADIUS = 0.05  # meters
DEFAULT_VOXEL_SIZE = 0.03  # meters


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInput("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInput("principal point must lie inside the image")


@dataclass
class VoxelGrid:
    """Axis-aligned voxelization of a box region with per-voxel touch flags."""

    origin: np.ndarray  # (3,) meters
    voxel_size: float
    dims: tuple[int, int, int]
    interacted: np.ndarray = field(default=None)  # bool, shape dims

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if self.voxel_size <= 0:
            raise InvalidInput("voxel size must be positive")
        if any(d <= 0 for d in self.dims):
            raise InvalidInput("grid dims must be positive")
        if self.interacted is None:
            self.interacted = np.zeros(self.dims, dtype=bool)

    def point_to_index(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Voxel indices for (..., 3) points plus an in-bounds mask."""
        idx = np.floor((points - self.origin) / self.voxel_size).astype(np.int64)
        inb = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)
        return idx, inb

    def voxel_centers(self, idx: np.ndarray) -> np.ndarray:
        return self.origin + (idx + 0.5) * self.voxel_size

    def is_interacted(self, points: np.ndarray) -> np.ndarray:
        """Touch flag per (..., 3) point; out-of-grid points are untouched."""
        idx, inb = self.point_to_index(points)
        out = np.zeros(points.shape[:-1], dtype=bool)
        if np.any(inb):
            sel = idx[inb]
            out[inb] = self.interacted[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.origin.copy(), self.voxel_size, self.dims, self.interacted.copy())


def deproject(depth: np.ndarray, intr: CameraIntrinsics, pose: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel 3D points in the world frame.

    depth holds z in meters with 0 marking invalid pixels; pose is a 4x4
    camera-to-world rigid transform. Returns (points (H, W, 3), valid (H, W));
    points of invalid pixels are zero-filled and must be ignored.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    if (h, w) != (intr.height, intr.width):
        raise InvalidInput(f"depth shape {(h, w)} != intrinsics {(intr.height, intr.width)}")
    valid = depth > 0
    us = np.arange(w, dtype=np.float64)
    vs = np.arange(h, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    x = (uu - intr.cx) * depth / intr.fx
    y = (vv - intr.cy) * depth / intr.fy
    cam = np.stack([x, y, depth], axis=-1)
    rot, t = pose[:3, :3], pose[:3, 3]
    world = cam @ rot.T + t
    world[~valid] = 0.0
    return world, valid


def mark_interacted(grid: VoxelGrid, hand: np.ndarray, radius: float = TOUCH_RADIUS) -> VoxelGrid:
    """Flag every voxel whose center lies within `radius` of the hand point.

    Mutates and returns the grid; marking is idempotent and spheres fully
    outside the grid mark nothing.
    """
    if radius <= 0:
        raise InvalidInput("radius must be positive")
    hand = np.asarray(hand, dtype=np.float64)
    lo = np.floor((hand - radius - grid.origin) / grid.voxel_size).astype(np.int64)
    hi = np.floor((hand + radius - grid.origin) / grid.voxel_size).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(grid.dims) - 1)
    if np.any(lo > hi):
        return grid
    ii, jj, kk = np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij")
    idx = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    centers = grid.voxel_centers(idx)
    near = np.linalg.norm(centers - hand, axis=1) <= radius
    sel = idx[near]
    grid.interacted[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return grid


def frame_interaction_mask(depth: np.ndarray, intr: CameraIntrinsics, pose: np.ndarray,
                           grid: VoxelGrid) -> np.ndarray:
    """Pixels whose deprojected point falls in a touched voxel.

    Invalid-depth pixels are never labeled (they cannot be located in 3D).
    """
    points, valid = deproject(depth, intr, pose)
    mask = grid.is_interacted(points)
    mask &= valid
    return mask


def temporal_or(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Pixel-wise OR over exactly five consecutive frame masks."""
    if len(masks) != TEMPORAL_FRAMES:
        raise InvalidInput(f"temporal OR needs exactly {TEMPORAL_FRAMES} masks, got {len(masks)}")
    shape = masks[0].shape
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.shape != shape:
            raise InvalidInput("frame masks disagree on shape")
        out |= m.astype(bool)
    return out


def filter_training_mask(interaction_mask: np.ndarray, predicted: np.ndarray,
                         plant_class: int) -> np.ndarray:
    """Zero interaction-mask pixels whose predicted label is not the plant class."""
    if interaction_mask.shape != predicted.shape:
        raise InvalidInput("interaction mask and prediction shapes differ")
    return interaction_mask.astype(bool) & (predicted == plant_class)

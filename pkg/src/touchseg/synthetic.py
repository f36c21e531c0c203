"""Synthetic RGB-D scene generation and simulated touch interaction.

Scenes are ray-cast against analytic primitives: a ground plane, rows of
plant "bushes" (sphere clusters), vertical posts, and a back wall. A seeded
fraction of bushes is *withheld*: their pixels stay "plant" in the ground
truth but are labeled "artificial" in the training labels, producing the
under-trained model whose false-negative plant regions the touch interaction
is meant to repair. Depth error is modeled as additive Gaussian noise plus an
integer pixel registration offset between the depth and RGB images.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInput
from .geometry import (
    DEFAULT_VOXEL_SIZE,
    TEMPORAL_FRAMES,
    TOUCH_RADIUS,
    CameraIntrinsics,
    VoxelGrid,
    deproject,
    mark_interacted,
)

PLANT, ARTIFICIAL, GROUND = 0, 1, 2
CLASS_NAMES = ("plant", "artificial", "ground")

_GREEN = np.array([0.16, 0.52, 0.18])
_YELLOW = np.array([0.72, 0.68, 0.10])
_GROUND_COLOR = np.array([0.42, 0.31, 0.20])
_WALL_COLOR = np.array([0.66, 0.68, 0.70])
_POST_COLOR = np.array([0.60, 0.52, 0.26])  # weathered wood stakes
_LIGHT = np.array([0.35, -0.4, 0.85]) / np.linalg.norm([0.35, -0.4, 0.85])


@dataclass
class SceneSpec:
    """Generator parameters: world geometry, withheld fraction, noise model."""

    image_size: int = 128
    fov_deg: float = 70.0
    cam_height: float = 0.45
    cam_y: float = -0.75
    pitch_deg: float = 8.0
    # voxel grid extents covering the interaction volume
    grid_origin: tuple[float, float, float] = (-1.2, -0.2, 0.0)
    grid_size: float = DEFAULT_VOXEL_SIZE
    grid_dims: tuple[int, int, int] = (80, 50, 30)
    # plant row geometry
    row_y: tuple[float, ...] = (0.25, 0.7)
    bushes_per_row: int = 5
    bush_x_span: float = 0.66
    bush_radius: tuple[float, float] = (0.12, 0.18)
    bush_height: tuple[float, float] = (0.30, 0.42)
    spheres_per_bush: int = 4
    withheld_fraction: float = 0.4
    withheld_color_mix: float = 0.55  # 0 = normal green, 1 = full yellow
    # artificial objects
    post_count: int = 3
    post_y: float = 1.5
    post_radius: float = 0.045
    post_height: float = 0.8
    wall_y: float = 2.2
    # appearance variation: per-bush color jitter, low-frequency greenish
    # mottling, and dense weed patches whose color approaches bush green —
    # the honest sources of the pre-trained model's plant false positives.
    # Withheld bushes share one tight hue (one plant cultivar).
    bush_color_jitter: float = 0.05
    withheld_color_jitter: float = 0.02
    ground_moss_amp: float = 0.16
    weed_threshold: float = 1.1  # moss-field value above which ground reads as weeds
    weed_strength: float = 0.6  # how far weed color moves toward bush green
    # sensor noise
    depth_sigma: float = 0.01
    reg_jitter_px: int = 2
    texture_amp: float = 0.07

    def __post_init__(self):
        if self.image_size <= 0:
            raise InvalidInput("image_size must be positive")
        if self.bushes_per_row <= 0 or not self.row_y:
            raise InvalidInput("scene needs at least one plant bush")
        if not (0.0 <= self.withheld_fraction <= 1.0):
            raise InvalidInput("withheld_fraction must be in [0, 1]")
        if self.depth_sigma < 0 or self.reg_jitter_px < 0:
            raise InvalidInput("noise parameters must be non-negative")
        if self.grid_size <= 0 or any(d <= 0 for d in self.grid_dims):
            raise InvalidInput("degenerate voxel grid spec")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        kwargs = dict(d)
        for key in ("grid_origin", "grid_dims", "row_y", "bush_radius", "bush_height"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def intrinsics(self) -> CameraIntrinsics:
        s = self.image_size
        f = (s / 2.0) / np.tan(np.radians(self.fov_deg) / 2.0)
        return CameraIntrinsics(fx=f, fy=f, cx=(s - 1) / 2.0, cy=(s - 1) / 2.0, width=s, height=s)

    def camera_pose(self) -> np.ndarray:
        """Camera-to-world transform: x right, y down-ish, z forward/pitched."""
        p = np.radians(self.pitch_deg)
        forward = np.array([0.0, np.cos(p), -np.sin(p)])
        right = np.array([1.0, 0.0, 0.0])
        down = np.cross(forward, right)
        pose = np.eye(4)
        pose[:3, 0], pose[:3, 1], pose[:3, 2] = right, down, forward
        pose[:3, 3] = [0.0, self.cam_y, self.cam_height]
        return pose

    def voxel_grid(self) -> VoxelGrid:
        return VoxelGrid(np.array(self.grid_origin), self.grid_size, tuple(self.grid_dims))


@dataclass
class SyntheticScene:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64 meters, noise-free
    gt_labels: np.ndarray  # (H, W) uint8 in {PLANT, ARTIFICIAL, GROUND}
    withheld_mask: np.ndarray  # plant pixels labeled artificial during pre-training
    intrinsics: CameraIntrinsics
    camera_pose: np.ndarray  # (4, 4) camera-to-world
    spec: SceneSpec
    seed: int

    @property
    def train_labels(self) -> np.ndarray:
        """Labels used for pre-training: withheld plant regions read artificial."""
        out = self.gt_labels.copy()
        out[self.withheld_mask] = ARTIFICIAL
        return out

    def render_noisy_depth(self, rng: np.random.Generator) -> np.ndarray:
        """One sensor frame: registration-jittered depth plus Gaussian noise."""
        d = self.depth
        j = self.spec.reg_jitter_px
        if j > 0:
            dv, du = (int(x) for x in rng.integers(-j, j + 1, size=2))
            h, w = d.shape
            rows = np.clip(np.arange(h) + dv, 0, h - 1)
            cols = np.clip(np.arange(w) + du, 0, w - 1)
            d = d[np.ix_(rows, cols)]
        if self.spec.depth_sigma > 0:
            d = d + rng.normal(0.0, self.spec.depth_sigma, size=d.shape)
        return np.maximum(d, 0.0)


@dataclass
class HandTrajectory:
    """Simulated 3D hand positions, one frame index per point."""

    frames: np.ndarray  # (K,) int
    points: np.ndarray  # (K, 3) world meters

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        if not np.isfinite(self.points).all():
            raise InvalidInput("trajectory points must be finite")
        if self.frames.shape[0] != self.points.shape[0]:
            raise InvalidInput("frames and points length mismatch")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class _Sphere:
    center: np.ndarray
    radius: float
    withheld: bool
    color: np.ndarray = None


def _value_noise(rng: np.random.Generator, h: int, w: int, cells: int = 9) -> np.ndarray:
    """Smooth low-frequency noise field in roughly [-1, 1] via bilinear
    upsampling of a coarse seeded grid."""
    coarse = rng.normal(0.0, 1.0, (cells, cells))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells - 1, w)
    y0 = np.clip(ys.astype(int), 0, cells - 2)
    x0 = np.clip(xs.astype(int), 0, cells - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x0 + 1)]
    c = coarse[np.ix_(y0 + 1, x0)]
    d = coarse[np.ix_(y0 + 1, x0 + 1)]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def _place_world(spec: SceneSpec, rng: np.random.Generator):
    """Seeded bush spheres (with withheld flags) and post positions."""
    spheres: list[_Sphere] = []
    bush_flags = []
    withheld_base = (1 - spec.withheld_color_mix) * _GREEN + spec.withheld_color_mix * _YELLOW
    for y in spec.row_y:
        slots = np.linspace(-spec.bush_x_span, spec.bush_x_span, spec.bushes_per_row)
        for x0 in slots:
            bush_flags.append(bool(rng.random() < spec.withheld_fraction))
            x = x0 + rng.uniform(-0.05, 0.05)
            yy = y + rng.uniform(-0.03, 0.03)
            z = rng.uniform(*spec.bush_height)
            r0 = rng.uniform(*spec.bush_radius)
            base = withheld_base if bush_flags[-1] else _GREEN
            jitter = spec.withheld_color_jitter if bush_flags[-1] else spec.bush_color_jitter
            color = np.clip(base + rng.normal(0.0, jitter, 3), 0.0, 1.0)
            centers = [np.array([x, yy, z])]
            for _ in range(spec.spheres_per_bush - 1):
                off = rng.normal(0.0, 0.55 * r0, size=3) * np.array([1.0, 1.0, 0.6])
                centers.append(centers[0] + off)
            for i, c in enumerate(centers):
                r = r0 if i == 0 else r0 * rng.uniform(0.55, 0.85)
                spheres.append(_Sphere(center=c, radius=r, withheld=bush_flags[-1], color=color))
    if spec.withheld_fraction > 0 and not any(bush_flags):
        # guarantee at least one misclassified region to repair
        k = int(rng.integers(len(bush_flags)))
        per_bush = spec.spheres_per_bush
        for s in spheres[k * per_bush:(k + 1) * per_bush]:
            s.withheld = True
    posts = np.linspace(-0.8, 0.8, spec.post_count) if spec.post_count else np.array([])
    return spheres, posts


def generate_scene(seed: int, spec: Optional[SceneSpec] = None) -> tuple[SyntheticScene, np.ndarray]:
    """Render one scene; deterministic per (seed, spec).

    Also returns the ground-truth plant voxel set: unique indices (K, 3) of
    spec.voxel_grid() voxels that contain a visible plant surface point.
    """
    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)
    spheres, posts = _place_world(spec, rng)
    intr = spec.intrinsics()
    pose = spec.camera_pose()
    h = w = spec.image_size

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)
    rot, origin = pose[:3, :3], pose[:3, 3]
    dirs = d_cam @ rot.T  # z-component of d_cam is 1, so ray parameter t = z-depth

    t_best = np.full((h, w), np.inf)
    label = np.full((h, w), ARTIFICIAL, dtype=np.uint8)  # rays that miss would face the wall
    color = np.tile(_WALL_COLOR, (h, w, 1))
    normal = np.zeros((h, w, 3))
    withheld = np.zeros((h, w), dtype=bool)

    def commit(t, hit, lab, col, nrm, is_withheld=False):
        closer = hit & (t < t_best)
        if not np.any(closer):
            return
        t_best[closer] = t[closer]
        label[closer] = lab
        color[closer] = col
        normal[closer] = nrm[closer] if nrm.ndim == 3 else nrm
        withheld[closer] = is_withheld

    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        # ground plane z = 0
        t = -origin[2] / dz
        commit(t, (dz < -1e-9) & (t > 0), GROUND, _GROUND_COLOR, np.array([0.0, 0.0, 1.0]))
        # back wall y = wall_y
        dy = dirs[..., 1]
        t = (spec.wall_y - origin[1]) / dy
        commit(t, (dy > 1e-9) & (t > 0), ARTIFICIAL, _WALL_COLOR, np.array([0.0, -1.0, 0.0]))
        # posts: vertical cylinders in front of the wall
        for x in posts:
            c = np.array([x, spec.post_y])
            oc = origin[:2] - c
            a = dirs[..., 0] ** 2 + dirs[..., 1] ** 2
            b = 2.0 * (dirs[..., 0] * oc[0] + dirs[..., 1] * oc[1])
            cc = oc @ oc - spec.post_radius ** 2
            disc = b * b - 4 * a * cc
            ok = disc > 0
            t = np.where(ok, (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a), np.inf)
            z_hit = origin[2] + t * dz
            hit = ok & (t > 0) & (z_hit >= 0.0) & (z_hit <= spec.post_height)
            p = origin + t[..., None] * dirs
            n = np.zeros_like(p)
            n[..., 0] = (p[..., 0] - c[0]) / spec.post_radius
            n[..., 1] = (p[..., 1] - c[1]) / spec.post_radius
            commit(t, hit, ARTIFICIAL, _POST_COLOR, n)
        # plant spheres
        dd = np.einsum("hwd,hwd->hw", dirs, dirs)
        for s in spheres:
            oc = origin - s.center
            b = 2.0 * (dirs @ oc)
            cc = oc @ oc - s.radius ** 2
            disc = b * b - 4 * cc * dd
            ok = disc > 0
            t = np.where(ok, (-b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * dd), np.inf)
            hit = ok & (t > 0)
            p = origin + t[..., None] * dirs
            n = (p - s.center) / s.radius
            commit(t, hit, PLANT, s.color, n, s.withheld)

    depth = np.where(np.isfinite(t_best), t_best, 0.0)
    shade = 0.62 + 0.38 * np.clip(normal @ _LIGHT, 0.0, 1.0)
    rgb = color * shade[..., None]
    if spec.ground_moss_amp > 0:
        field = _value_noise(rng, h, w)
        moss = np.where(label == GROUND, np.maximum(field, 0.0) * spec.ground_moss_amp, 0.0)
        rgb += moss[..., None] * np.array([-0.25, 1.0, -0.1])
        # weeds thicken toward the plant rows, so the model's plant false
        # positives concentrate where touches later happen
        hit_y = (origin + t_best[..., None] * dirs)[..., 1]
        row_dist = np.min(np.abs(hit_y[..., None] - np.asarray(spec.row_y)), axis=-1)
        boosted = field + 0.8 * np.clip(1.0 - row_dist / 0.3, 0.0, 1.0)
        weeds = (label == GROUND) & (boosted > spec.weed_threshold)
        mix = spec.weed_strength * np.clip(boosted - spec.weed_threshold, 0.0, 1.0)[..., None]
        rgb = np.where(weeds[..., None], (1 - mix) * rgb + mix * (_GREEN * shade[..., None]), rgb)
    rgb += rng.uniform(-spec.texture_amp, spec.texture_amp, size=rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)
    rgb8 = np.round(rgb * 255.0).astype(np.uint8)

    scene = SyntheticScene(rgb=rgb8, depth=depth, gt_labels=label, withheld_mask=withheld,
                           intrinsics=intr, camera_pose=pose, spec=spec, seed=seed)
    grid = spec.voxel_grid()
    points, valid = deproject(depth, intr, pose)
    plant = (label == PLANT) & valid
    idx, inb = grid.point_to_index(points[plant])
    plant_voxels = np.unique(idx[inb], axis=0)
    return scene, plant_voxels


def noisy_depth_frames(scene: SyntheticScene, seed: int,
                       count: int = TEMPORAL_FRAMES) -> list[np.ndarray]:
    """The per-frame depth images the mask pipeline consumes."""
    rng = np.random.default_rng(seed)
    return [scene.render_noisy_depth(rng) for _ in range(count)]


HAND_NOISE_FACTOR = 1.5  # hand localization error relative to depth noise
HAND_NOISE_CAP = 0.023  # keeps every touch within 5 cm of a plant voxel center


def simulate_touch(scene: SyntheticScene, grid: VoxelGrid, seed: int, strokes: int,
                   radius: float = TOUCH_RADIUS, withheld_bias: float = 0.8) -> HandTrajectory:
    """Sample touch points on visible plant surfaces, biased toward withheld
    (misclassified) regions.

    The sampled surface points keep enough clearance from non-plant surfaces
    that noise-free masks built from them contain only plant pixels. The hand
    position itself is observed through the depth sensor, so each point gets
    Gaussian error proportional to the scene's depth noise (exact when the
    scene is noise-free). Deterministic per seed.
    """
    plant_px = scene.gt_labels == PLANT
    if not np.any(plant_px):
        raise InvalidInput("scene has no plant pixels to touch")
    if strokes == 0:
        return HandTrajectory(frames=np.zeros(0, dtype=np.int64), points=np.zeros((0, 3)))
    points, valid = deproject(scene.depth, scene.intrinsics, scene.camera_pose)
    plant_pts = points[plant_px & valid]
    other_pts = points[(~plant_px) & valid]
    clearance = radius + grid.voxel_size * np.sqrt(3.0) / 2.0 + 0.005
    if other_pts.shape[0]:
        dist, _ = cKDTree(other_pts).query(plant_pts, k=1)
        ok = dist > clearance
    else:
        ok = np.ones(plant_pts.shape[0], dtype=bool)
    candidates = plant_pts[ok]
    if candidates.shape[0] == 0:
        raise InvalidInput("no plant surface with enough clearance to touch")
    flags = scene.withheld_mask[plant_px & valid][ok]
    rng = np.random.default_rng(seed)
    pools = (candidates[flags], candidates[~flags])
    chosen = np.empty((strokes, 3))
    for i in range(strokes):
        pool = pools[0] if (pools[0].shape[0] and rng.random() < withheld_bias) else pools[1]
        if pool.shape[0] == 0:
            pool = candidates
        chosen[i] = pool[int(rng.integers(pool.shape[0]))]
    hand_sigma = HAND_NOISE_FACTOR * scene.spec.depth_sigma
    if hand_sigma > 0:
        noise = rng.normal(0.0, hand_sigma, size=chosen.shape)
        norms = np.linalg.norm(noise, axis=1, keepdims=True)
        noise *= np.minimum(1.0, HAND_NOISE_CAP / np.maximum(norms, 1e-12))
        chosen = chosen + noise
    frames = np.arange(strokes, dtype=np.int64) % TEMPORAL_FRAMES
    return HandTrajectory(frames=frames, points=chosen)


def mark_trajectory(grid: VoxelGrid, trajectory: HandTrajectory,
                    radius: float = TOUCH_RADIUS) -> VoxelGrid:
    """Sphere-mark every trajectory point into the grid."""
    for p in trajectory.points:
        mark_interacted(grid, p, radius)
    return grid

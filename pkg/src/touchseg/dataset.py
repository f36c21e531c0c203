"""Scene dataset persistence.

Layout, one directory per scene:
    rgb.png          8-bit RGB
    depth.png        16-bit single channel, millimeters (0 = invalid)
    labels.png       8-bit ground-truth class indices
    train_labels.png 8-bit pre-training class indices (withheld plant regions
                     read "artificial"); derivable from meta.json but stored
                     for convenience
    meta.json        intrinsics, camera pose (16 row-major floats), generator
                     seed and spec

Loading regenerates the scene from the recorded seed and spec so consumers
get the exact depth and withheld mask rather than the millimeter-quantized
PNG; the PNGs are the interchange format for external tools.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInput
from .synthetic import SceneSpec, SyntheticScene, generate_scene

META_VERSION = 1


def save_scene(directory: str | Path, scene: SyntheticScene) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(scene.rgb, mode="RGB").save(d / "rgb.png")
    depth_mm = np.round(scene.depth * 1000.0).astype(np.uint16)
    Image.fromarray(depth_mm).save(d / "depth.png")  # uint16 -> 16-bit PNG
    Image.fromarray(scene.gt_labels.astype(np.uint8), mode="L").save(d / "labels.png")
    Image.fromarray(scene.train_labels.astype(np.uint8), mode="L").save(d / "train_labels.png")
    intr = scene.intrinsics
    meta = {
        "version": META_VERSION,
        "intrinsics": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                       "width": intr.width, "height": intr.height},
        "camera_pose": [float(x) for x in scene.camera_pose.reshape(-1)],
        "seed": scene.seed,
        "spec": scene.spec.to_dict(),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1))
    return d


def load_scene(directory: str | Path) -> SyntheticScene:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise InvalidInput(f"{d} has no meta.json")
    meta = json.loads(meta_path.read_text())
    scene, _ = generate_scene(int(meta["seed"]), SceneSpec.from_dict(meta["spec"]))
    return scene


def load_arrays(directory: str | Path) -> dict[str, np.ndarray]:
    """Raw file contents without regeneration (depth in meters)."""
    d = Path(directory)
    out = {
        "rgb": np.asarray(Image.open(d / "rgb.png").convert("RGB")),
        "labels": np.asarray(Image.open(d / "labels.png")),
        "depth": np.asarray(Image.open(d / "depth.png"), dtype=np.float64) / 1000.0,
    }
    tl = d / "train_labels.png"
    if tl.exists():
        out["train_labels"] = np.asarray(Image.open(tl))
    return out


def scene_dirs(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise InvalidInput(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if (p / "meta.json").exists())


def save_dataset(root: str | Path, scenes: list[SyntheticScene], prefix: str = "scene") -> list[Path]:
    return [save_scene(Path(root) / f"{prefix}_{i:03d}", s) for i, s in enumerate(scenes)]


def load_dataset(root: str | Path) -> list[SyntheticScene]:
    dirs = scene_dirs(root)
    if not dirs:
        raise InvalidInput(f"no scenes found under {root}")
    return [load_scene(p) for p in dirs]

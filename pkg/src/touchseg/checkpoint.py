"""Model checkpoints: JSON header plus a flat little-endian float32 payload.

Layout:
    magic "TSEG" | version u32 LE | header length u32 LE | header JSON
    | payload (float32 LE), arrays in the order declared by the header

Values are quantized to float32 on the first save; anything loaded from a
checkpoint round-trips bit-exactly thereafter.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, UnsupportedVersion
from .model import CosineClassifier, ExtractorParams, SegModel

MAGIC = b"TSEG"
VERSION = 1

_PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


def checkpoint_bytes(model: SegModel) -> bytes:
    ext, head = model.extractor, model.head
    arrays = [getattr(ext, n) for n in _PARAM_ORDER] + [head.weights]
    layout = [[n, list(getattr(ext, n).shape)] for n in _PARAM_ORDER]
    layout.append(["head.weights", list(head.weights.shape)])
    payload = np.concatenate([a.reshape(-1) for a in arrays]).astype("<f4").tobytes()
    header = {
        "dim": ext.dim,
        "hidden": ext.hidden,
        "blur_radius": ext.blur_radius,
        "class_count": head.class_count,
        "margin": head.margin,
        "scale": head.scale,
        "class_names": head.class_names,
        "parents": {str(k): v for k, v in head.parents.items()},
        "layout": layout,
        "payload_floats": len(payload) // 4,
    }
    hbytes = json.dumps(header).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + payload


def checkpoint_save(model: SegModel, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def model_from_bytes(data: bytes) -> SegModel:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptCheckpoint("bad magic")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}, supported: {VERSION}")
    if len(data) < 12 + hlen:
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"unreadable header: {e}") from e
    payload = data[12 + hlen:]
    expected = int(header["payload_floats"])
    if len(payload) != 4 * expected:
        raise CorruptCheckpoint(f"payload is {len(payload)} bytes, expected {4 * expected}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    arrays = {}
    offset = 0
    for name, shape in header["layout"]:
        n = int(np.prod(shape))
        if offset + n > flat.size:
            raise CorruptCheckpoint(f"layout overruns payload at {name}")
        arrays[name] = flat[offset:offset + n].reshape(shape)
        offset += n
    if offset != flat.size:
        raise CorruptCheckpoint("payload longer than layout")
    try:
        ext = ExtractorParams(*(arrays[n] for n in _PARAM_ORDER),
                              blur_radius=int(header["blur_radius"]))
        head = CosineClassifier(
            weights=arrays["head.weights"], margin=float(header["margin"]),
            scale=float(header["scale"]), class_names=list(header["class_names"]),
            parents={int(k): int(v) for k, v in header.get("parents", {}).items()})
    except KeyError as e:
        raise CorruptCheckpoint(f"header missing field {e}") from e
    return SegModel(ext, head)


def checkpoint_load(path: str | Path) -> SegModel:
    return model_from_bytes(Path(path).read_bytes())


def models_equal(a: SegModel, b: SegModel) -> bool:
    """Bit-exact comparison of two models (arrays and metadata)."""
    same_arrays = all(
        np.array_equal(getattr(a.extractor, n), getattr(b.extractor, n)) for n in _PARAM_ORDER
    ) and np.array_equal(a.head.weights, b.head.weights)
    return (same_arrays
            and a.extractor.blur_radius == b.extractor.blur_radius
            and a.head.margin == b.head.margin
            and a.head.scale == b.head.scale
            and a.head.class_names == b.head.class_names
            and a.head.parents == b.head.parents)

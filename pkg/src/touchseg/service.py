"""HTTP refinement service.

Endpoints (JSON unless noted):
    GET  /api/scenes                scene ids and dimensions
    GET  /api/scene/{id}            RGB PNG
    GET  /api/segmentation/{id}     indexed PNG (base64) + class palette
    POST /api/stroke                {sceneId, points: [{x, y}]} -> mask preview
    POST /api/imprint               {method: "map" | "rap"} -> before/after metrics
    POST /api/reset                 {} -> {}
    GET  /api/metrics               current MetricsReport

Mutating endpoints serialize on the session lock; reads are concurrent.
Every request path is forward-only (no gradient computation).
"""

from __future__ import annotations

import base64
import io
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from .checkpoint import checkpoint_load
from .dataset import load_scene, scene_dirs
from .errors import EmptyMask, InvalidInput
from .imprinting import MAP, RAP
from .session import Session

# display colors per class index; imprinted classes reuse a highlight color
CLASS_COLORS = [(60, 170, 70), (120, 130, 200), (150, 110, 70), (235, 220, 80),
                (235, 120, 200), (90, 220, 220)]


class StrokeRequest(BaseModel):
    sceneId: str
    points: list[dict]


class ImprintRequest(BaseModel):
    method: str


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _indexed_png(labels: np.ndarray, class_count: int) -> bytes:
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    palette = []
    for j in range(max(class_count, 1)):
        palette.extend(CLASS_COLORS[j % len(CLASS_COLORS)])
    img.putpalette(palette)
    return _png_bytes(img)


def create_app(session: Session, static_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="touchseg refinement service")

    @app.exception_handler(InvalidInput)
    def _invalid(request, exc):
        return JSONResponse(status_code=400, content={"error": "invalid_input", "detail": str(exc)})

    @app.exception_handler(EmptyMask)
    def _empty(request, exc):
        return JSONResponse(status_code=409, content={"error": "empty_mask", "guidance": str(exc)})

    @app.get("/api/scenes")
    def scenes():
        out = []
        for sid, scene in sorted(session.scenes.items()):
            h, w = scene.gt_labels.shape
            out.append({"id": sid, "width": w, "height": h})
        return {"scenes": out, "sessionId": session.session_id}

    @app.get("/api/scene/{scene_id}")
    def scene_png(scene_id: str):
        if scene_id not in session.scenes:
            return JSONResponse(status_code=404, content={"error": "unknown_scene"})
        png = _png_bytes(Image.fromarray(session.scenes[scene_id].rgb))
        return Response(content=png, media_type="image/png")

    @app.get("/api/segmentation/{scene_id}")
    def segmentation(scene_id: str):
        if scene_id not in session.scenes:
            return JSONResponse(status_code=404, content={"error": "unknown_scene"})
        labels = session.predicted_labels(scene_id)
        head = session.model.head
        palette = [{"index": j, "name": head.class_names[j],
                    "color": list(CLASS_COLORS[j % len(CLASS_COLORS)])}
                   for j in range(head.class_count)]
        png = _indexed_png(labels, head.class_count)
        return {"png": base64.b64encode(png).decode("ascii"), "palette": palette}

    @app.post("/api/stroke")
    def stroke(req: StrokeRequest):
        pts = [(float(p["x"]), float(p["y"])) for p in req.points]
        result = session.apply_stroke(req.sceneId, pts)
        mask_png = _png_bytes(Image.fromarray((result.m_prime * 255).astype(np.uint8)))
        return {"maskPreview": base64.b64encode(mask_png).decode("ascii"),
                "pixelCount": result.pixel_count, "skipped": result.skipped}

    @app.post("/api/imprint")
    def do_imprint(req: ImprintRequest):
        method = req.method.lower()
        if method not in (MAP, RAP):
            return JSONResponse(status_code=400,
                                content={"error": "unknown_method", "detail": req.method})
        result = session.imprint(method)
        return {"before": result["before"].to_dict(), "after": result["after"].to_dict(),
                "elapsedMs": result["elapsed_ms"]}

    @app.post("/api/reset")
    def reset():
        session.reset()
        return {}

    @app.get("/api/metrics")
    def current_metrics():
        return session.metrics().to_dict()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")
    return app


def build_session(data_dir: str | Path, checkpoint_path: str | Path,
                  frame_seed: int = 0) -> Session:
    model = checkpoint_load(checkpoint_path)
    dirs = scene_dirs(data_dir)
    if not dirs:
        raise InvalidInput(f"no scenes found under {data_dir}")
    scenes = {d.name: load_scene(d) for d in dirs}
    return Session(model, scenes, frame_seed=frame_seed)


def serve(port: int, data_dir: str | Path, checkpoint_path: str | Path,
          host: str = "127.0.0.1", static_dir: Optional[str | Path] = None) -> None:
    import uvicorn

    session = build_session(data_dir, checkpoint_path)
    app = create_app(session, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")

import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from touchseg import counters
from touchseg.checkpoint import models_equal
from touchseg.errors import EmptyMask, InvalidInput
from touchseg.experiment import evaluate_on
from touchseg.model import CosineClassifier, ExtractorParams, PretrainConfig, SegModel, pretrain
from touchseg.service import create_app
from touchseg.session import Session
from touchseg.synthetic import ARTIFICIAL, PLANT, SceneSpec, generate_scene


@pytest.fixture(scope="module")
def session_model():
    """A quickly pre-trained model on two tiny scenes (shared, copied per use)."""
    spec = SceneSpec(image_size=48)
    scenes = [generate_scene(100 + i, spec)[0] for i in range(3)]
    model, _ = pretrain([(s.rgb, s.train_labels) for s in scenes],
                        PretrainConfig(epochs=150, lr=0.15, scale=4.0, seed=0, hidden=16, dim=8))
    return model, {f"scene_{i:03d}": s for i, s in enumerate(scenes)}


@pytest.fixture
def session(session_model):
    model, scenes = session_model
    return Session(model.copy(), scenes, frame_seed=3)


def plant_stroke_points(scene, model, count=6):
    """Image points on plant pixels currently predicted as plant."""
    from touchseg.model import cosine_logits, extract_features, predict

    pred = predict(cosine_logits(extract_features(scene.rgb, model.extractor), model.head))
    ys, xs = np.where((scene.gt_labels == PLANT) & (pred == PLANT))
    step = max(1, len(xs) // count)
    return [(float(x), float(y)) for x, y in zip(xs[::step][:count], ys[::step][:count])]


class TestSession:
    def test_stroke_builds_mask(self, session):
        sid = "scene_000"
        pts = plant_stroke_points(session.scenes[sid], session.model)
        result = session.apply_stroke(sid, pts)
        assert result.pixel_count > 0
        assert result.m_prime.any()

    def test_empty_points_no_change(self, session):
        sid = "scene_000"
        before = session.interaction_mask(sid)
        result = session.apply_stroke(sid, [])
        assert before is None
        assert result.pixel_count == 0

    def test_strokes_accumulate_monotonically(self, session):
        sid = "scene_000"
        pts = plant_stroke_points(session.scenes[sid], session.model, count=8)
        first = session.apply_stroke(sid, pts[:4]).m_prime.copy()
        second = session.apply_stroke(sid, pts[4:]).m_prime
        assert (second | first == second).all()

    def test_out_of_bounds_point_rejected(self, session):
        with pytest.raises(InvalidInput):
            session.apply_stroke("scene_000", [(1e6, 3.0)])

    def test_unknown_scene_rejected(self, session):
        with pytest.raises(InvalidInput):
            session.apply_stroke("nope", [(1.0, 1.0)])

    def test_invalid_depth_point_skipped(self, session):
        sid = "scene_000"
        scene = session.scenes[sid]
        scene_depth = scene.depth.copy()
        try:
            scene.depth[5, 7] = 0.0
            result = session.apply_stroke(sid, [(7.0, 5.0)])
            assert result.skipped and result.skipped[0]["reason"] == "invalid depth"
        finally:
            scene.depth[:] = scene_depth

    def test_imprint_then_reset_restores_pristine(self, session):
        sid = "scene_001"
        pts = plant_stroke_points(session.scenes[sid], session.model)
        session.apply_stroke(sid, pts)
        pristine = session.model.copy()
        out = session.imprint("rap")
        assert out["after"].mean_iou is not None
        assert session.model.head.class_count == pristine.head.class_count + 1
        session.reset()
        assert models_equal(session.model, pristine)
        assert session.metrics() == session.initial_metrics

    def test_imprint_without_strokes_is_empty_mask(self, session):
        with pytest.raises(EmptyMask):
            session.imprint("rap")

    def test_strokes_on_nonplant_predictions_empty_mask(self, session_model):
        model, scenes = session_model
        session = Session(model.copy(), scenes, frame_seed=3)
        sid = "scene_000"
        scene = scenes[sid]
        from touchseg.model import cosine_logits, extract_features, predict

        pred = predict(cosine_logits(extract_features(scene.rgb, model.extractor), model.head))
        ys, xs = np.where((pred != PLANT) & (scene.depth > 0))
        pts = [(float(xs[i]), float(ys[i])) for i in range(0, min(len(xs), 400), 40)]
        session.apply_stroke(sid, pts)
        # every touched pixel is predicted non-plant, so filtering removes all
        if session.interaction_mask(sid).any():
            m_px = session.interaction_mask(sid)
            if (pred[m_px] == PLANT).any():
                pytest.skip("stroke spilled onto predicted-plant pixels on this fixture")
            with pytest.raises(EmptyMask):
                session.imprint("rap")

    def test_no_gradients_in_session_paths(self, session):
        sid = "scene_000"
        before = counters.snapshot()
        pts = plant_stroke_points(session.scenes[sid], session.model)
        session.apply_stroke(sid, pts)
        session.imprint("map")
        session.reset()
        d = counters.delta(before)
        assert d["backward_passes"] == 0 and d["gradient_steps"] == 0

    def test_interleaved_strokes_linearize(self, session):
        # concurrent stroke batches must behave like some sequential order;
        # marking is commutative, so the union is that order's result
        import threading

        sid = "scene_000"
        pts = plant_stroke_points(session.scenes[sid], session.model, count=12)
        halves = [pts[:6], pts[6:]]
        threads = [threading.Thread(target=session.apply_stroke, args=(sid, h)) for h in halves]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        concurrent_mask = session.interaction_mask(sid).copy()

        sequential = Session(session.model.copy(), session.scenes, frame_seed=3)
        sequential.apply_stroke(sid, pts[:6])
        sequential.apply_stroke(sid, pts[6:])
        assert np.array_equal(concurrent_mask, sequential.interaction_mask(sid))


@pytest.fixture
def client(session):
    return TestClient(create_app(session)), session


class TestService:
    def test_scenes_listing(self, client):
        c, _ = client
        r = c.get("/api/scenes")
        assert r.status_code == 200
        ids = [s["id"] for s in r.json()["scenes"]]
        assert ids == sorted(ids) and len(ids) == 3

    def test_scene_png(self, client):
        c, session = client
        r = c.get("/api/scene/scene_000")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        img = Image.open(io.BytesIO(r.content))
        assert img.size == (48, 48)

    def test_unknown_scene_404(self, client):
        c, _ = client
        assert c.get("/api/scene/zzz").status_code == 404

    def test_segmentation_palette(self, client):
        c, session = client
        r = c.get("/api/segmentation/scene_000")
        assert r.status_code == 200
        body = r.json()
        names = [p["name"] for p in body["palette"]]
        assert names == list(session.model.head.class_names)
        png = Image.open(io.BytesIO(base64.b64decode(body["png"])))
        assert png.mode == "P"

    def test_stroke_imprint_reset_flow(self, client):
        c, session = client
        pts = plant_stroke_points(session.scenes["scene_000"], session.model)
        r = c.post("/api/stroke", json={"sceneId": "scene_000",
                                        "points": [{"x": x, "y": y} for x, y in pts]})
        assert r.status_code == 200
        assert r.json()["pixelCount"] > 0
        baseline = c.get("/api/metrics").json()

        r = c.post("/api/imprint", json={"method": "rap"})
        assert r.status_code == 200
        body = r.json()
        assert body["before"] == baseline
        assert body["elapsedMs"] > 0
        assert c.get("/api/metrics").json() == body["after"]

        assert c.post("/api/reset", json={}).status_code == 200
        assert c.get("/api/metrics").json() == baseline

    def test_unknown_method_400(self, client):
        c, _ = client
        r = c.post("/api/imprint", json={"method": "trimmed-mean"})
        assert r.status_code == 400

    def test_imprint_without_strokes_409_with_guidance(self, client):
        c, _ = client
        r = c.post("/api/imprint", json={"method": "rap"})
        assert r.status_code == 409
        assert "guidance" in r.json()

    def test_out_of_bounds_stroke_400(self, client):
        c, _ = client
        r = c.post("/api/stroke", json={"sceneId": "scene_000", "points": [{"x": 4000, "y": 2}]})
        assert r.status_code == 400

    def test_no_gradients_in_request_paths(self, client):
        c, session = client
        before = counters.snapshot()
        c.get("/api/scenes")
        c.get("/api/segmentation/scene_001")
        pts = plant_stroke_points(session.scenes["scene_001"], session.model)
        c.post("/api/stroke", json={"sceneId": "scene_001",
                                    "points": [{"x": x, "y": y} for x, y in pts]})
        c.post("/api/imprint", json={"method": "map"})
        c.post("/api/reset", json={})
        d = counters.delta(before)
        assert d["backward_passes"] == 0 and d["gradient_steps"] == 0

import numpy as np
import pytest

from touchseg.model import CosineClassifier, ExtractorParams, SegModel
from touchseg.synthetic import SceneSpec, generate_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    """Small random model for unit tests: D=8, hidden=6, C=4."""
    ext = ExtractorParams.init(3, hidden=6, dim=8)
    head = CosineClassifier.init(4, class_count=4, dim=8, margin=0.1, scale=16.0)
    return SegModel(ext, head)


@pytest.fixture(scope="session")
def small_scene():
    """One deterministic 64x64 scene shared by read-only tests."""
    scene, plant_voxels = generate_scene(11, SceneSpec(image_size=64))
    return scene, plant_voxels


def random_unit_features(rng, h, w, d):
    x = rng.normal(size=(h, w, d))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)

import numpy as np
import pytest

from touchseg.errors import DegeneratePrototype, EmptyMask, InvalidInput
from touchseg.imprinting import (
    SupportSet,
    imprint,
    masked_average_pool,
    pool,
    robust_average_pool,
)
from touchseg.model import CosineClassifier, FeatureMap

from conftest import random_unit_features


def oracle_map(features, masks):
    """Scalar triple-loop reference: plain masked average then normalize."""
    d = features[0].shape[-1]
    acc = np.zeros(d)
    count = 0.0
    for fm, mask in zip(features, masks):
        h, w, _ = fm.shape
        for i in range(h):
            for j in range(w):
                if mask[i, j]:
                    acc = acc + fm[i, j]
                    count += 1.0
    raw = acc / count
    return raw, raw / np.linalg.norm(raw)


def oracle_rap(features, masks):
    """Scalar reference for robust pooling with clipped-cosine weights."""
    _, center = oracle_map(features, masks)
    d = features[0].shape[-1]
    acc = np.zeros(d)
    count = 0.0
    for fm, mask in zip(features, masks):
        h, w, _ = fm.shape
        for i in range(h):
            for j in range(w):
                if mask[i, j]:
                    v = float(fm[i, j] @ center)
                    if v < 0:
                        v = 0.0
                    acc = acc + v * fm[i, j]
                    count += 1.0
    raw = acc / count
    return raw, raw / np.linalg.norm(raw)


def random_fixture(rng, n_max=3, hw_max=8, d_max=8):
    n = int(rng.integers(1, n_max + 1))
    h = int(rng.integers(1, hw_max + 1))
    w = int(rng.integers(1, hw_max + 1))
    d = int(rng.integers(2, d_max + 1))
    features = [random_unit_features(rng, h, w, d) for _ in range(n)]
    masks = [(rng.random((h, w)) < 0.4) for _ in range(n)]
    if not any(m.any() for m in masks):
        masks[0][0, 0] = True
    return features, masks


class TestPoolingOracle:
    def test_matches_triple_loop_oracle(self, rng):
        for _ in range(40):
            features, masks = random_fixture(rng)
            fms = [FeatureMap(f) for f in features]
            m = masked_average_pool(fms, masks)
            raw_ref, norm_ref = oracle_map(features, masks)
            assert np.abs(m.raw - raw_ref).max() < 1e-6
            assert np.abs(m.normalized - norm_ref).max() < 1e-6
            r = robust_average_pool(fms, masks)
            raw_ref, norm_ref = oracle_rap(features, masks)
            assert np.abs(r.raw - raw_ref).max() < 1e-6
            assert np.abs(r.normalized - norm_ref).max() < 1e-6

    def test_single_pixel_returns_that_feature(self, rng):
        f = random_unit_features(rng, 3, 3, 6)
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 2] = True
        out = masked_average_pool([FeatureMap(f)], [mask])
        assert np.abs(out.normalized - f[1, 2]).max() < 1e-9

    def test_two_orthonormal_pixels(self):
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0, 0.0])
        f = np.stack([e1, e2]).reshape(1, 2, 4)
        out = masked_average_pool([FeatureMap(f)], [np.ones((1, 2))])
        assert np.abs(out.normalized - (e1 + e2) / np.sqrt(2)).max() < 1e-9

    def test_uuw_case(self):
        # {u, u, w} with u ⟂ w: RAP = (4u+w)/sqrt(17), MAP = (2u+w)/sqrt(5)
        u = np.array([1.0, 0.0, 0.0])
        w = np.array([0.0, 1.0, 0.0])
        f = np.stack([u, u, w]).reshape(1, 3, 3)
        mask = np.ones((1, 3))
        m = masked_average_pool([FeatureMap(f)], [mask])
        r = robust_average_pool([FeatureMap(f)], [mask])
        assert np.abs(m.normalized - (2 * u + w) / np.sqrt(5)).max() < 1e-9
        assert np.abs(r.normalized - (4 * u + w) / np.sqrt(17)).max() < 1e-9
        assert float(r.normalized @ u) == pytest.approx(4 / np.sqrt(17), abs=1e-9)
        assert float(m.normalized @ u) == pytest.approx(2 / np.sqrt(5), abs=1e-9)

    def test_identical_features_rap_equals_map(self, rng):
        f = random_unit_features(rng, 1, 1, 5)
        fm = np.repeat(f, 4, axis=1)
        mask = np.ones((1, 4))
        m = masked_average_pool([FeatureMap(fm)], [mask])
        r = robust_average_pool([FeatureMap(fm)], [mask])
        assert np.abs(r.normalized - m.normalized).max() < 1e-9
        assert np.abs(r.normalized - f[0, 0]).max() < 1e-9

    def test_opposed_outlier_fully_suppressed(self):
        u = np.zeros(4)
        u[0] = 1.0
        f = np.stack([u, u, -u]).reshape(1, 3, 4)
        r = robust_average_pool([FeatureMap(f)], [np.ones((1, 3))])
        assert np.abs(r.normalized - u).max() < 1e-12
        assert r.pixel_weights[0][0, 2] == 0.0


class TestPoolingProperties:
    def test_reference_scale_invariance(self, rng):
        # v computed against lambda * center changes only the scale of v,
        # clipping keeps the same zero set, normalization absorbs the rest
        for _ in range(10):
            features, masks = random_fixture(rng)
            fms = [FeatureMap(f) for f in features]
            base = robust_average_pool(fms, masks).normalized
            _, center = oracle_map(features, masks)
            for lam in (0.25, 4.0):
                d = features[0].shape[-1]
                acc = np.zeros(d)
                count = 0.0
                for f, mask in zip(features, masks):
                    v = np.maximum(f @ (lam * center), 0.0)
                    acc += np.einsum("hw,hwd->d", v * mask, f)
                    count += mask.sum()
                scaled = acc / count
                scaled /= np.linalg.norm(scaled)
                assert np.abs(scaled - base).max() < 1e-9

    def test_duplication_invariance(self, rng):
        for _ in range(10):
            features, masks = random_fixture(rng)
            fms = [FeatureMap(f) for f in features]
            doubled = fms + fms
            masks2 = masks + masks
            for fn in (masked_average_pool, robust_average_pool):
                a = fn(fms, masks)
                b = fn(doubled, masks2)
                assert np.abs(a.normalized - b.normalized).max() < 1e-9

    def test_negative_dot_contributes_zero(self, rng):
        for _ in range(10):
            features, masks = random_fixture(rng)
            fms = [FeatureMap(f) for f in features]
            r = robust_average_pool(fms, masks)
            _, center = oracle_map(features, masks)
            d = features[0].shape[-1]
            acc = np.zeros(d)
            count = 0.0
            for f, mask in zip(features, masks):
                v = f @ center
                keep = (v > 0) & mask.astype(bool)
                acc += np.einsum("hw,hwd->d", np.where(keep, v, 0.0), f)
                count += mask.sum()
            assert np.abs(r.raw - acc / count).max() < 1e-9

    def test_statistical_robustness(self, rng):
        # inliers near mu_p, outliers near an opposed mu_o: RAP stays at
        # least as close to mu_p as MAP in >= 95 of 100 seeded trials
        wins = 0
        for t in range(100):
            trng = np.random.default_rng(9000 + t)
            d = 12
            mu_p = trng.normal(size=d)
            mu_p /= np.linalg.norm(mu_p)
            mu_o = trng.normal(size=d)
            mu_o -= (mu_o @ mu_p) * mu_p  # orthogonal: dot(mu_p, mu_o) = 0
            mu_o /= np.linalg.norm(mu_o)
            n = 120
            rho = float(trng.uniform(0.1, 0.3))
            k = int(round(rho * n))
            pts = mu_p + 0.25 * trng.normal(size=(n, d))
            pts[:k] = -0.6 * mu_p + mu_o + 0.25 * trng.normal(size=(k, d))
            pts /= np.linalg.norm(pts, axis=1, keepdims=True)
            fm = FeatureMap(pts.reshape(1, n, d))
            mask = np.ones((1, n))
            c_map = float(masked_average_pool([fm], [mask]).normalized @ mu_p)
            c_rap = float(robust_average_pool([fm], [mask]).normalized @ mu_p)
            if c_rap >= c_map:
                wins += 1
        assert wins >= 95

    def test_all_zero_masks(self, rng):
        f = random_unit_features(rng, 3, 3, 4)
        with pytest.raises(EmptyMask):
            masked_average_pool([FeatureMap(f)], [np.zeros((3, 3))])
        with pytest.raises(EmptyMask):
            robust_average_pool([FeatureMap(f)], [np.zeros((3, 3))])

    def test_cancelling_features_degenerate(self):
        u = np.zeros(4)
        u[0] = 1.0
        f = np.stack([u, -u]).reshape(1, 2, 4)
        with pytest.raises(DegeneratePrototype):
            masked_average_pool([FeatureMap(f)], [np.ones((1, 2))])

    def test_length_mismatch(self, rng):
        f = random_unit_features(rng, 2, 2, 4)
        with pytest.raises(InvalidInput):
            masked_average_pool([FeatureMap(f)], [])
        with pytest.raises(InvalidInput):
            masked_average_pool([FeatureMap(f)], [np.ones((3, 3))])

    def test_unknown_method(self, rng):
        f = random_unit_features(rng, 2, 2, 4)
        with pytest.raises(InvalidInput):
            pool([FeatureMap(f)], [np.ones((2, 2))], "median")


class TestImprint:
    def _proto(self, rng, d=8):
        f = random_unit_features(rng, 1, 1, d)
        mask = np.ones((1, 1))
        return masked_average_pool([FeatureMap(f)], [mask])

    def test_grafts_new_row(self, rng, tiny_model):
        head = tiny_model.head
        proto = self._proto(rng)
        out = imprint(head, proto, parent_class=0)
        assert out.class_count == head.class_count + 1
        assert np.array_equal(out.weights[:-1], head.weights)
        assert np.array_equal(out.weights[-1], proto.normalized)
        assert out.parents[head.class_count] == 0

    def test_input_head_not_mutated(self, rng, tiny_model):
        head = tiny_model.head
        w_before = head.weights.copy()
        names = list(head.class_names)
        imprint(head, self._proto(rng), 1)
        assert np.array_equal(head.weights, w_before)
        assert head.class_names == names and head.parents == {}

    def test_double_imprint_duplicates_rows(self, rng, tiny_model):
        proto = self._proto(rng)
        once = imprint(tiny_model.head, proto, 0)
        twice = imprint(once, proto, 0)
        assert twice.class_count == tiny_model.head.class_count + 2
        assert np.array_equal(twice.weights[-1], twice.weights[-2])
        assert twice.parents == {4: 0, 5: 0}

    def test_feature_equal_to_prototype_scores_one(self, rng, tiny_model):
        proto = self._proto(rng)
        out = imprint(tiny_model.head, proto, 0)
        from touchseg.model import cosine_logits, predict

        fm = FeatureMap(proto.normalized.reshape(1, 1, -1))
        scores = cosine_logits(fm, out)
        assert scores[0, 0, -1] == pytest.approx(1.0, abs=1e-9)
        assert predict(scores)[0, 0] == out.class_count - 1

    def test_dim_mismatch(self, rng, tiny_model):
        proto = self._proto(rng, d=5)
        with pytest.raises(InvalidInput):
            imprint(tiny_model.head, proto, 0)

    def test_parent_out_of_range(self, rng, tiny_model):
        with pytest.raises(InvalidInput):
            imprint(tiny_model.head, self._proto(rng), 9)


class TestSupportSet:
    def test_valid(self, rng):
        img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 1] = True
        s = SupportSet(pairs=[(img, mask)])
        assert s.count == 1

    def test_empty_pairs(self):
        with pytest.raises(InvalidInput):
            SupportSet(pairs=[])

    def test_dimension_mismatch(self, rng):
        img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        with pytest.raises(InvalidInput):
            SupportSet(pairs=[(img, np.ones((3, 3), dtype=bool))])

    def test_no_set_pixel_anywhere(self, rng):
        img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        with pytest.raises(EmptyMask):
            SupportSet(pairs=[(img, np.zeros((4, 4), dtype=bool))])

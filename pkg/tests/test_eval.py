import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmask.data import synthetic_dataset
from hybridmask.errors import RejectedInputError
from hybridmask.eval import (
    AttackConfig,
    MethodScores,
    fuse_scores,
    masked_views,
    ms_ssim,
    msssim_distance,
    normalize,
    train_attacker,
    write_report,
)
from hybridmask.eval.scores import feature_score, privacy_raw, visual_score
from hybridmask.freq import MaskKey
from hybridmask.nn import ArcFaceConfig, FaceNet


class TestMetric:
    def test_identical_is_zero(self):
        img = np.random.default_rng(0).random((2, 32, 32))
        np.testing.assert_allclose(msssim_distance(img, img), 0.0, atol=1e-12)

    def test_noise_increases_distance(self):
        rng = np.random.default_rng(1)
        img = synthetic_dataset(1, 1, 32, 0).images[0]
        d = [float(msssim_distance(img, np.clip(img + rng.normal(0, s, img.shape), 0, 1))) for s in (0.01, 0.05, 0.2)]
        assert d[0] < d[1] < d[2]

    def test_range_and_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        d = msssim_distance(a, b)
        assert np.all((d >= 0) & (d <= 1))
        np.testing.assert_allclose(d, msssim_distance(b, a), atol=1e-12)

    def test_batched(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((4, 16, 16)), rng.random((4, 16, 16))
        np.testing.assert_allclose(ms_ssim(a, b)[2], ms_ssim(a[2], b[2]))

    def test_errors(self):
        with pytest.raises(RejectedInputError):
            ms_ssim(np.zeros((8, 8)), np.zeros((8, 4)))
        with pytest.raises(RejectedInputError):
            ms_ssim(np.zeros((2, 2)), np.zeros((2, 2)))


def method(name, raw, acc):
    # Split a target raw privacy value evenly across the four scores.
    s = raw / 2.0
    return MethodScores(name, s, s, s, s, acc, 0.9)


class TestFusion:
    def test_score_is_mean(self):
        cards = fuse_scores([method("a", 0.1, 0.5), method("b", 0.9, 0.8)])
        for c in cards:
            assert c.Score == (c.Score_pp + c.Score_cls) / 2

    def test_normalize_endpoints(self):
        out = normalize([3.0, 1.0, 2.0])
        np.testing.assert_allclose(out, [1.0, 0.5, 0.75])

    def test_degenerate_population(self):
        np.testing.assert_array_equal(normalize([0.4, 0.4]), [1.0, 1.0])
        card = fuse_scores([method("solo", 0.3, 0.7)])[0]
        assert card.Score_pp == card.Score_cls == card.Score == 1.0

    def test_privacy_weights(self):
        assert privacy_raw(1, 0, 0, 0) == pytest.approx(0.4)
        assert privacy_raw(0, 0, 0, 1) == pytest.approx(0.6)
        m = MethodScores("x", 0.1, 0.2, 0.3, 0.4, 0.5, 1.0)
        assert fuse_scores([m], alpha=0.5, beta=0.5)[0].raw_pp == pytest.approx(0.5)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 10), min_size=2, max_size=8, unique=True), st.floats(0.01, 100))
    def test_rank_invariant_to_rescaling(self, raws, scale):
        base = [method(f"m{i}", r, 0.5) for i, r in enumerate(raws)]
        scaled = [method(f"m{i}", r * scale, 0.5) for i, r in enumerate(raws)]
        order = np.argsort([c.Score_pp for c in fuse_scores(base)], kind="stable")
        order_s = np.argsort([c.Score_pp for c in fuse_scores(scaled)], kind="stable")
        np.testing.assert_array_equal(order, order_s)

    def test_acc_ratio(self):
        card = fuse_scores([MethodScores("x", 0, 0, 0, 0, 0.45, 0.9)])[0]
        assert card.acc_ratio == pytest.approx(0.5)

    def test_empty(self):
        with pytest.raises(RejectedInputError):
            fuse_scores([])

    def test_report_files(self, tmp_path):
        cards = fuse_scores([method("a", 0.1, 0.5), method("b", 0.9, 0.8)])
        csv_path, json_path = write_report(cards, tmp_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0].startswith("method_name,Score,Score_pp,Score_cls")
        assert len(lines) == 3
        assert json_path.exists()


class TestScores:
    def setup_method(self):
        self.d = synthetic_dataset(3, 4, 16, 0)
        self.net = FaceNet(256, ArcFaceConfig(class_count=3), hidden=(16, 8))
        self.params = self.net.init(np.random.default_rng(0))

    def test_identity_scores_zero(self):
        x = self.d.images
        assert visual_score(x, x) == pytest.approx(0.0, abs=1e-12)
        assert feature_score(self.net, self.params, x, x).value == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(RejectedInputError):
            visual_score(self.d.images, self.d.images[:2])

    def test_zero_feature_skipped(self):
        self.params.values["fr.fc1.W"][:] = 0.0
        self.params.values["fr.fc1.b"][:] = 0.0
        fs = feature_score(self.net, self.params, self.d.images, self.d.images)
        assert fs.skipped == len(self.d.images) and np.isnan(fs.value)


class TestHarness:
    def test_identity_views_are_originals(self):
        d = synthetic_dataset(2, 4, 16, 0)
        views = masked_views(d.images, d.labels, MaskKey.identity(), (1,))
        np.testing.assert_allclose(views, d.images, atol=1e-12)

    def test_masked_views_deterministic(self):
        d = synthetic_dataset(2, 8, 16, 0)
        key = MaskKey.generate(1)
        a = masked_views(d.images, d.labels, key, (2, 3), batch_size=5, rng=np.random.default_rng(3))
        b = masked_views(d.images, d.labels, key, (2, 3), batch_size=5, rng=np.random.default_rng(3))
        assert a.tobytes() == b.tobytes()
        assert msssim_distance(d.images, a).mean() > 0.1

    def test_attacker_learns(self):
        d = synthetic_dataset(3, 8, 16, 0)
        cfg = AttackConfig(hidden=(32,), epochs=40)
        model = train_attacker(d.images, d.images, cfg)
        assert model.losses[-1] < model.losses[0]
        again = train_attacker(d.images, d.images, cfg)
        assert model.params.identical(again.params)

    def test_attacker_rejects_misaligned(self):
        d = synthetic_dataset(2, 4, 16, 0)
        with pytest.raises(RejectedInputError):
            train_attacker(d.images, d.images[:3])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybridmask.errors import RejectedInputError
from hybridmask.eval.metrics import msssim_distance
from hybridmask.freq import (
    BlockParams,
    MaskKey,
    bdct_forward,
    bdct_inverse,
    channelize,
    dct2_block,
    dechannelize,
    idct2_block,
    ppfr_fd_mask,
    render,
    self_normalize,
)

from oracles import naive_dct2, naive_idct2

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestBlockDCT:
    def test_constant_block(self):
        out = dct2_block(np.full((8, 8), 0.3))
        expected = np.zeros((8, 8))
        expected[0, 0] = 8 * 0.3
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_matches_naive_definition(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            b = rng.random((8, 8))
            np.testing.assert_allclose(dct2_block(b), naive_dct2(b), atol=1e-10)
            np.testing.assert_allclose(idct2_block(b), naive_idct2(b), atol=1e-10)

    def test_round_trip(self):
        b = np.random.default_rng(1).random((8, 8))
        np.testing.assert_allclose(idct2_block(dct2_block(b)), b, atol=1e-6)

    @given(arrays(np.float64, (8, 8), elements=finite))
    def test_parseval(self, b):
        c = dct2_block(b)
        assert abs((c**2).sum() - (b**2).sum()) <= 1e-6 * max(1.0, (b**2).sum())

    def test_shape_mismatch(self):
        with pytest.raises(RejectedInputError):
            dct2_block(np.zeros((4, 8)))

    def test_only_nonoverlapping_blocks(self):
        with pytest.raises(RejectedInputError):
            BlockParams(8, 8, 4)


class TestBDCT:
    def test_single_block(self):
        img = np.random.default_rng(2).random((8, 8))
        f = bdct_forward(img)
        assert f.shape == (64, 1, 1)
        np.testing.assert_allclose(f[:, 0, 0].reshape(8, 8), dct2_block(img), atol=1e-12)

    def test_constant_image(self):
        f = bdct_forward(np.full((16, 16), 0.25))
        np.testing.assert_allclose(f[0], np.full((2, 2), 2.0), atol=1e-12)
        np.testing.assert_allclose(f[1:], 0.0, atol=1e-12)

    def test_block_grid_order(self):
        img = np.random.default_rng(3).random((16, 24))
        f = bdct_forward(img)
        assert f.shape == (64, 2, 3)
        np.testing.assert_allclose(f[:, 1, 2].reshape(8, 8), naive_dct2(img[8:16, 16:24]), atol=1e-10)

    def test_round_trip(self):
        img = np.random.default_rng(4).random((32, 32))
        np.testing.assert_allclose(bdct_inverse(bdct_forward(img)), img, atol=1e-5)

    def test_batched_matches_single(self):
        imgs = np.random.default_rng(5).random((3, 16, 16))
        batched = bdct_forward(imgs)
        for i in range(3):
            np.testing.assert_array_equal(batched[i], bdct_forward(imgs[i]))

    def test_non_divisible(self):
        with pytest.raises(RejectedInputError):
            bdct_forward(np.zeros((30, 32)))

    def test_inverse_zero(self):
        np.testing.assert_array_equal(bdct_inverse(np.zeros((64, 2, 2))), np.zeros((16, 16)))

    def test_inverse_dc_dropped_constant(self):
        key = MaskKey.generate(0)
        f = bdct_forward(np.full((16, 16), 0.7))[1:]
        np.testing.assert_allclose(bdct_inverse(f, keep_list=key.keep_list), 0.0, atol=1e-12)

    def test_inverse_channel_mismatch(self):
        with pytest.raises(RejectedInputError):
            bdct_inverse(np.zeros((63, 2, 2)))

    @given(arrays(np.float64, (2, 3, 8, 8), elements=finite))
    def test_channelize_bijection(self, blocks):
        np.testing.assert_array_equal(dechannelize(channelize(blocks), 8, 8), blocks)


class TestSelfNormalize:
    def test_example(self):
        np.testing.assert_allclose(self_normalize(np.array([[[2.0, -4.0]]])), [[[0.5, -1.0]]])

    def test_zero_channel(self):
        f = np.zeros((2, 2, 2))
        f[1] = 3.0
        out = self_normalize(f)
        np.testing.assert_array_equal(out[0], 0.0)
        np.testing.assert_array_equal(out[1], 1.0)

    @given(arrays(np.float64, (3, 2, 2), elements=finite))
    def test_idempotent(self, f):
        once = self_normalize(f)
        np.testing.assert_allclose(self_normalize(once), once, atol=1e-15)
        peaks = np.abs(once).max(axis=(1, 2))
        assert np.all((peaks == 0) | np.isclose(peaks, 1.0))

    @given(arrays(np.float64, (3, 2, 2), elements=finite), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, f, alpha):
        np.testing.assert_allclose(self_normalize(alpha * f), self_normalize(f), atol=1e-12)


class TestMasking:
    def test_identity_key(self):
        img = np.random.default_rng(6).random((32, 32))
        np.testing.assert_array_equal(ppfr_fd_mask(img, MaskKey.identity()), bdct_forward(img))

    def test_deterministic(self):
        img = np.random.default_rng(7).random((32, 32))
        key = MaskKey.generate(11)
        a, b = ppfr_fd_mask(img, key), ppfr_fd_mask(img, key)
        assert a.tobytes() == b.tobytes()

    def test_default_key_masks(self):
        img = np.random.default_rng(8).random((32, 32))
        key = MaskKey.generate(3)
        out = ppfr_fd_mask(img, key)
        assert out.shape == (63, 4, 4)
        assert (0, 0) not in key.keep_list
        assert msssim_distance(img, render(out, key)) > 0

    def test_permutation_preserves_multiset(self):
        img = np.random.default_rng(9).random((16, 16))
        key = MaskKey.generate(5)
        shuffle_only = MaskKey(key.perm1, [], key.perm2, key.keep_list, normalize=False)
        retained = bdct_forward(img)[1:]
        out = ppfr_fd_mask(img, shuffle_only)
        np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(retained.ravel()))

    def test_mixing_formula(self):
        img = np.random.default_rng(10).random((8, 8))
        n = 64
        key = MaskKey(list(range(n)), [(0, 1, 0.25)], list(range(n)), BlockParams().all_positions(), normalize=False)
        f = bdct_forward(img)
        out = ppfr_fd_mask(img, key)
        np.testing.assert_allclose(out[0], 0.25 * f[0] + 0.75 * f[1])
        np.testing.assert_array_equal(out[1:], f[1:])

    def test_batched(self):
        imgs = np.random.default_rng(12).random((4, 16, 16))
        key = MaskKey.generate(1)
        out = ppfr_fd_mask(imgs, key)
        np.testing.assert_allclose(out[2], ppfr_fd_mask(imgs[2], key))

    def test_key_mismatch(self):
        key = MaskKey.generate(0)
        key.perm1 = key.perm1[:-1]
        with pytest.raises(RejectedInputError):
            ppfr_fd_mask(np.zeros((8, 8)), key)

    def test_bad_mix_weight(self):
        key = MaskKey.generate(0)
        key.mix_plan = [(0, 1, 1.0)]
        with pytest.raises(RejectedInputError):
            key.validate()

    def test_duplicate_keep(self):
        key = MaskKey.generate(0)
        key.keep_list[1] = key.keep_list[0]
        with pytest.raises(RejectedInputError):
            key.validate()


class TestMaskKeyJSON:
    def test_round_trip(self, tmp_path):
        key = MaskKey.generate(42)
        key.save(tmp_path / "key.json")
        loaded = MaskKey.load(tmp_path / "key.json")
        assert loaded == key
        img = np.random.default_rng(0).random((16, 16))
        assert ppfr_fd_mask(img, loaded).tobytes() == ppfr_fd_mask(img, key).tobytes()

    def test_same_seed_same_key(self):
        assert MaskKey.generate(9) == MaskKey.generate(9)
        assert MaskKey.generate(9) != MaskKey.generate(10)

    def test_extra_drops(self):
        key = MaskKey.generate(0, drop=[(0, 0), (7, 7)])
        assert key.n_channels == 62
        assert (7, 7) not in key.keep_list

    def test_malformed(self):
        with pytest.raises(RejectedInputError):
            MaskKey.from_dict({"perm1": [0]})

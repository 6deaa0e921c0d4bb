import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybridmask.data import (
    Dataset,
    generate_synthetic,
    load_dataset,
    read_pgm,
    read_tensor,
    save_dataset,
    synthetic_dataset,
    write_pgm,
    write_tensor,
)
from hybridmask.errors import ConfigError, LoadError


class TestPGM:
    def test_round_trip(self, tmp_path):
        px = np.random.default_rng(0).integers(0, 256, (16, 24), dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", px)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), px)

    def test_comment_in_header(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([7, 9]))
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[7, 9]])

    def test_16_bit_rejected_with_name(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(LoadError) as err:
            read_pgm(path)
        assert "deep.pgm" in str(err.value)

    def test_truncated(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(10))
        with pytest.raises(LoadError):
            read_pgm(tmp_path / "t.pgm")

    def test_missing(self, tmp_path):
        with pytest.raises(LoadError):
            read_pgm(tmp_path / "nope.pgm")


class TestTensorFile:
    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 3)),
                  elements=st.floats(-1e3, 1e3, width=32)))
    def test_round_trip(self, tmp_path_factory, arr):
        path = tmp_path_factory.mktemp("t") / "x.fmt"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.dtype == np.float32 and back.tobytes() == arr.astype("<f4").tobytes()

    def test_layout(self, tmp_path):
        write_tensor(tmp_path / "x.fmt", np.arange(6, dtype=np.float32).reshape(2, 3))
        raw = (tmp_path / "x.fmt").read_bytes()
        assert raw[:4] == b"FMT1"
        assert int.from_bytes(raw[4:12], "little") == 2
        assert len(raw) == 4 + 8 + 16 + 24

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.fmt").write_bytes(b"JUNKJUNK")
        with pytest.raises(LoadError):
            read_tensor(tmp_path / "x.fmt")

    def test_size_mismatch(self, tmp_path):
        write_tensor(tmp_path / "x.fmt", np.zeros((3, 3), dtype=np.float32))
        raw = (tmp_path / "x.fmt").read_bytes()
        (tmp_path / "y.fmt").write_bytes(raw[:-4])
        with pytest.raises(LoadError):
            read_tensor(tmp_path / "y.fmt")


class TestSynthetic:
    def test_shapes_and_splits(self):
        d = synthetic_dataset(4, 8, 16, 0)
        assert d.images.shape == (32, 16, 16)
        assert d.class_count == 4
        assert (d.splits == "test").sum() == 8
        assert d.images.min() >= 0 and d.images.max() <= 1
        np.testing.assert_array_equal(np.round(d.images * 255) / 255, d.images)

    def test_deterministic(self):
        a, b = synthetic_dataset(3, 4, 8, 5), synthetic_dataset(3, 4, 8, 5)
        assert a.images.tobytes() == b.images.tobytes()
        assert synthetic_dataset(3, 4, 8, 6).images.tobytes() != a.images.tobytes()

    def test_classes_differ_more_than_samples(self):
        d = synthetic_dataset(2, 10, 16, 1)
        means = [d.images[d.labels == c].mean(axis=0) for c in range(2)]
        within = np.abs(d.images[d.labels == 0] - means[0]).mean()
        assert np.abs(means[0] - means[1]).mean() > within

    def test_bad_size(self):
        with pytest.raises(ConfigError):
            synthetic_dataset(2, 2, 12, 0)


class TestManifest:
    def test_save_load_round_trip(self, tmp_path):
        d, manifest = generate_synthetic(3, 4, 16, 2, tmp_path / "ds")
        back = load_dataset(manifest)
        assert back.images.tobytes() == d.images.tobytes()
        np.testing.assert_array_equal(back.labels, d.labels)
        assert list(back.splits) == list(d.splits)

    def test_int_image_size(self, tmp_path):
        d = synthetic_dataset(2, 2, 8, 0)
        manifest = save_dataset(d, tmp_path)
        doc = json.loads(manifest.read_text())
        doc["image_size"] = 8
        manifest.write_text(json.dumps(doc))
        assert load_dataset(manifest).image_shape == (8, 8)

    def test_wrong_image_size(self, tmp_path):
        manifest = save_dataset(synthetic_dataset(2, 2, 8, 0), tmp_path)
        doc = json.loads(manifest.read_text())
        doc["image_size"] = [16, 16]
        manifest.write_text(json.dumps(doc))
        with pytest.raises(LoadError):
            load_dataset(manifest)

    def test_bad_class(self, tmp_path):
        manifest = save_dataset(synthetic_dataset(2, 2, 8, 0), tmp_path)
        doc = json.loads(manifest.read_text())
        doc["entries"][0]["class"] = 5
        manifest.write_text(json.dumps(doc))
        with pytest.raises(LoadError):
            load_dataset(manifest)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(LoadError):
            load_dataset(tmp_path / "manifest.json")

    def test_missing_image_names_file(self, tmp_path):
        manifest = save_dataset(synthetic_dataset(2, 2, 8, 0), tmp_path)
        (tmp_path / "c000_0000.pgm").unlink()
        with pytest.raises(LoadError) as err:
            load_dataset(manifest)
        assert "c000_0000.pgm" in str(err.value)

    def test_dataset_validation(self):
        with pytest.raises(ConfigError):
            Dataset(np.zeros((2, 8, 8)), [0, 3], 2, ["train", "test"])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mdn_mri import data
from mdn_mri.kspace import FormatError, save_cimg


def _write_raw_pgm(path, header, payload):
    path.write_bytes(header.encode() + payload)


class TestPgm:
    def test_eight_bit_roundtrip(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])
        data.write_pgm(tmp_path / "a.pgm", img)
        raw, maxval = data.read_pgm(tmp_path / "a.pgm")
        assert maxval == 255 and raw.dtype == np.uint8
        np.testing.assert_array_equal(raw, [[0, 128], [255, 64]])

    def test_sixteen_bit_big_endian(self, tmp_path):
        img = np.array([[1.0, 0.0, 256 / 65535]])
        data.write_pgm(tmp_path / "b.pgm", img, bits=16)
        payload = (tmp_path / "b.pgm").read_bytes().split(b"65535\n", 1)[1]
        assert payload == b"\xff\xff\x00\x00\x01\x00"
        raw, maxval = data.read_pgm(tmp_path / "b.pgm")
        assert maxval == 65535 and raw.dtype == np.uint16
        np.testing.assert_array_equal(raw, [[65535, 0, 256]])

    def test_ascii_with_comments(self, tmp_path):
        (tmp_path / "c.pgm").write_text("P2\n# made by hand\n3 1\n# depth\n10\n0 5 10\n")
        raw, maxval = data.read_pgm(tmp_path / "c.pgm")
        assert maxval == 10
        np.testing.assert_array_equal(raw, [[0, 5, 10]])

    @pytest.mark.parametrize("header,payload,match", [
        ("P5\n4 4\n", b"", "truncated PGM header"),
        ("P5\n2 2\n255\n", b"\x00\x01", "truncated PGM raster"),
        ("P5\n2 2\n70000\n", b"\x00" * 8, "maxval"),
        ("P6\n1 1\n255\n", b"\x00\x00\x00", "magic"),
    ])
    def test_malformed(self, tmp_path, header, payload, match):
        _write_raw_pgm(tmp_path / "bad.pgm", header, payload)
        with pytest.raises(FormatError, match=match):
            data.read_pgm(tmp_path / "bad.pgm")

    def test_bad_bits(self, tmp_path):
        with pytest.raises(ValueError):
            data.write_pgm(tmp_path / "x.pgm", np.zeros((2, 2)), bits=12)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.uint16, (3, 5), elements=st.integers(0, 65535)))
    def test_sixteen_bit_exact(self, tmp_path_factory, q):
        path = tmp_path_factory.mktemp("pgm") / "q.pgm"
        data.write_pgm(path, q / 65535.0, bits=16)
        raw, _ = data.read_pgm(path)
        np.testing.assert_array_equal(raw, q)


class TestLoadDataset:
    def _corpus(self, tmp_path, n=3, shape=(8, 8)):
        rng = np.random.default_rng(0)
        for i in reversed(range(n)):
            data.write_pgm(tmp_path / f"img{i}.pgm", rng.random(shape) * 0.5)
        return tmp_path

    def test_sorted_and_normalized(self, tmp_path):
        ds = data.load_dataset(self._corpus(tmp_path))
        assert [p.rsplit("/", 1)[1] for p in ds.paths] == ["img0.pgm", "img1.pgm", "img2.pgm"]
        assert all(item.max() == 1.0 for item in ds.items)
        assert ds.shape == (8, 8) and not ds.is_complex

    def test_deterministic_digest(self, tmp_path):
        root = self._corpus(tmp_path)
        a, b = data.load_dataset(root), data.load_dataset(root)
        assert a.digest() == b.digest()
        for x, y in zip(a.items, b.items):
            np.testing.assert_array_equal(x, y)

    def test_pattern(self, tmp_path):
        ds = data.load_dataset(self._corpus(tmp_path), pattern="img1*")
        assert len(ds) == 1

    def test_no_images(self, tmp_path):
        (tmp_path / "readme.txt").write_text("nothing")
        with pytest.raises(data.DatasetError, match="no images found"):
            data.load_dataset(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(data.DatasetError, match="not a readable directory"):
            data.load_dataset(tmp_path / "absent")

    def test_dimension_mismatch_names_file(self, tmp_path):
        self._corpus(tmp_path)
        data.write_pgm(tmp_path / "img9.pgm", np.ones((6, 8)))
        with pytest.raises(data.DatasetError, match="img9.pgm"):
            data.load_dataset(tmp_path)

    def test_corrupt_file_named(self, tmp_path):
        self._corpus(tmp_path)
        _write_raw_pgm(tmp_path / "img5.pgm", "P5\n8 8\n255\n", b"\x00")
        with pytest.raises(data.DatasetError, match="img5.pgm"):
            data.load_dataset(tmp_path)

    def test_complex_items(self, tmp_path):
        rng = np.random.default_rng(1)
        z = rng.random((4, 4)) + 1j * rng.random((4, 4))
        save_cimg(z, tmp_path / "z.cimg")
        save_cimg(rng.random((4, 4)) + 0j, tmp_path / "r.cimg")
        ds = data.load_dataset(tmp_path)
        assert ds.is_complex
        real_item = ds.items[ds.paths.index(str(tmp_path / "r.cimg"))]
        assert not np.iscomplexobj(real_item)
        zi = ds.items[ds.paths.index(str(tmp_path / "z.cimg"))]
        assert np.abs(zi).max() == pytest.approx(1.0)


class TestRotations:
    def test_order_and_paths(self):
        ds = data.Dataset(items=[np.arange(9.0).reshape(3, 3)], paths=["a"])
        out = data.augment_rotations(ds, (90, 180))
        assert out.paths == ["a", "a@rot90", "a@rot180"]
        np.testing.assert_array_equal(out.items[1], np.rot90(ds.items[0]))
        assert out.rotations == (90, 180)

    def test_four_quarter_turns_identity(self):
        img = np.random.default_rng(0).random((5, 5))
        ds = data.Dataset(items=[img], paths=["x"])
        for _ in range(4):
            ds = data.Dataset(items=[data.augment_rotations(ds, (90,)).items[1]], paths=["x"])
        np.testing.assert_array_equal(ds.items[0], img)

    def test_count(self):
        ds = data.phantom_dataset(3, 16)
        assert len(data.augment_rotations(ds, (90, 180, 270))) == 12

    def test_invalid_angle(self):
        with pytest.raises(ValueError, match="90, 180 or 270"):
            data.augment_rotations(data.phantom_dataset(1, 8), (45,))

    def test_non_square(self):
        ds = data.Dataset(items=[np.zeros((4, 6))], paths=["r"])
        with pytest.raises(data.DatasetError, match="square"):
            data.augment_rotations(ds, (90,))
        assert len(data.augment_rotations(ds, (180,))) == 2


class TestPhantom:
    def test_range_and_seeded(self):
        a = data.phantom(32, seed=3)
        assert a.shape == (32, 32) and a.max() == 1.0 and a.min() >= 0
        np.testing.assert_array_equal(a, data.phantom(32, seed=3))
        assert not np.array_equal(a, data.phantom(32, seed=4))

    def test_unseeded_is_deterministic(self):
        np.testing.assert_array_equal(data.phantom(16), data.phantom(16))

    def test_dataset(self):
        ds = data.phantom_dataset(4, 16, seed=2)
        assert len(ds) == 4 and ds.paths[1] == "phantom:2:1"
        np.testing.assert_array_equal(ds.items[1], data.phantom(16, seed=2001))


class TestBicubic:
    def test_same_size_is_identity(self):
        img = np.random.default_rng(0).random((7, 9))
        np.testing.assert_allclose(data.resize_bicubic(img, img.shape), img, atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 5, allow_nan=False), st.integers(4, 20), st.integers(4, 20),
           st.sampled_from([2, 3, 4]))
    def test_constant_exact(self, value, h, w, scale):
        img = np.full((h, w), value)
        np.testing.assert_array_equal(data.bicubic_degrade(img, scale), img)

    def test_linear_ramp_interior(self):
        # Cubic convolution with a=-1/2 reproduces linear functions.
        ramp = np.tile(np.arange(16.0), (4, 1))
        up = data.resize_bicubic(ramp, (4, 32))
        expected = (np.arange(32) + 0.5) / 2 - 0.5
        np.testing.assert_allclose(up[:, 4:-4], np.tile(expected[4:-4], (4, 1)), atol=1e-12)

    def test_kernel_values(self):
        k = data._cubic(np.array([0.0, 0.5, 1.0, 1.5, 2.0]))
        np.testing.assert_allclose(k, [1.0, 0.5625, 0.0, -0.0625, 0.0])

    def test_degrade_shape_and_smoothing(self):
        img = data.phantom(30, seed=1)
        out = data.bicubic_degrade(img, 3)
        assert out.shape == img.shape
        assert np.abs(np.diff(out)).sum() < np.abs(np.diff(img)).sum()

import numpy as np
import pytest

from trajvid import formats


class TestTGT1:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        for shape in [(3,), (2, 5), (4, 3, 2), (1, 1, 1, 7)]:
            arr = rng.standard_normal(shape).astype(np.float32)
            path = tmp_path / "t.tgt"
            formats.write_tensor(path, arr)
            back = formats.read_tensor(path)
            assert back.shape == arr.shape
            assert back.tobytes() == arr.tobytes()

    def test_write_read_write_byte_identical(self, tmp_path, rng):
        arr = rng.standard_normal((5, 6)).astype(np.float32)
        p1, p2 = tmp_path / "a.tgt", tmp_path / "b.tgt"
        formats.write_tensor(p1, arr)
        formats.write_tensor(p2, formats.read_tensor(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        blob = formats.tensor_to_bytes(arr)
        assert blob[:4] == b"TGT1"
        assert blob[4:8] == (2).to_bytes(4, "little")
        assert blob[8:12] == (2).to_bytes(4, "little")
        assert blob[12:16] == (3).to_bytes(4, "little")
        assert blob[16:20] == np.float32(0.0).tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.tgt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="TGT1"):
            formats.read_tensor(path)

    def test_special_values_survive(self, tmp_path):
        arr = np.array([0.0, -0.0, 1e-38, 3.4e38], dtype=np.float32)
        path = tmp_path / "s.tgt"
        formats.write_tensor(path, arr)
        assert formats.read_tensor(path).tobytes() == arr.tobytes()


class TestContainer:
    def test_named_round_trip(self, tmp_path, rng):
        tensors = {
            "enc.conv1.kernel": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
            "enc.conv1.bias": np.zeros(4, dtype=np.float32),
            "meta.step": np.array([17.0], dtype=np.float32),
        }
        path = tmp_path / "params.tgc"
        formats.write_named_tensors(path, tensors)
        back = formats.read_named_tensors(path)
        assert set(back) == set(tensors)
        for name, arr in tensors.items():
            assert back[name].tobytes() == arr.tobytes()
            assert back[name].shape == arr.shape

    def test_order_preserved_and_byte_stable(self, tmp_path, rng):
        tensors = {f"p{i}": rng.standard_normal(3).astype(np.float32) for i in range(5)}
        p1, p2 = tmp_path / "a.tgc", tmp_path / "b.tgc"
        formats.write_named_tensors(p1, tensors)
        formats.write_named_tensors(p2, formats.read_named_tensors(p1))
        assert p1.read_bytes() == p2.read_bytes()


class TestNetpbm:
    def test_pgm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(7, 5), dtype=np.uint8)
        path = tmp_path / "m.pgm"
        formats.write_pgm(path, img)
        assert np.array_equal(formats.read_pgm(path), img)
        path2 = tmp_path / "m2.pgm"
        formats.write_pgm(path2, formats.read_pgm(path))
        assert path.read_bytes() == path2.read_bytes()

    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
        path = tmp_path / "f.ppm"
        formats.write_ppm(path, img)
        assert np.array_equal(formats.read_ppm(path), img)
        path2 = tmp_path / "f2.ppm"
        formats.write_ppm(path2, formats.read_ppm(path))
        assert path.read_bytes() == path2.read_bytes()

    def test_comment_headers_parse(self, tmp_path):
        img = np.arange(6, dtype=np.uint8).reshape(2, 3)
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + img.tobytes())
        assert np.array_equal(formats.read_pgm(path), img)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError, match="P5"):
            formats.read_pgm(path)

    def test_u8_quantization(self):
        assert formats.clip_to_u8(np.array([0.0, 1.0, 0.5, -3.0, 7.0])).tolist() == [0, 255, 128, 0, 255]

import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from imcgae import checkpoint
from imcgae.checkpoint import MAGIC, CheckpointError


def _params():
    rng = np.random.default_rng(0)
    return {"W": rng.normal(size=(3, 4)), "latent.0": rng.normal(size=(5, 2)), "scalar": np.array(2.5)}


class TestRoundTrip:
    def test_roundtrip(self, tmp_path):
        p = _params()
        checkpoint.save(tmp_path / "ckpt.bin", p, {"epoch": 7})
        got, meta = checkpoint.load(tmp_path / "ckpt.bin")
        assert meta == {"epoch": 7}
        assert list(got) == list(p)
        for k in p:
            np.testing.assert_array_equal(got[k], p[k])
            assert got[k].dtype == np.float64

    def test_layout(self):
        blob = checkpoint.dumps({"ab": np.array([[1.0, 2.0]])}, {})
        assert blob.startswith(b"imcgae-ckpt-v1\n")
        pos = len(MAGIC)
        (meta_len,) = struct.unpack_from("<I", blob, pos)
        assert blob[pos + 4:pos + 4 + meta_len] == b"{}"
        pos += 4 + meta_len
        assert struct.unpack_from("<I", blob, pos) == (1,)
        pos += 4
        assert struct.unpack_from("<H", blob, pos) == (2,)
        assert blob[pos + 2:pos + 4] == b"ab"
        pos += 4
        assert struct.unpack_from("<B", blob, pos) == (2,)
        assert struct.unpack_from("<2Q", blob, pos + 1) == (1, 2)
        pos += 17
        assert struct.unpack_from("<2d", blob, pos) == (1.0, 2.0)
        assert struct.unpack_from("<I", blob, len(blob) - 4) == (zlib.crc32(blob[:-4]),)

    def test_deterministic_bytes(self):
        assert checkpoint.dumps(_params(), {"b": 1, "a": 2}) == checkpoint.dumps(_params(), {"a": 2, "b": 1})

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4),
                  elements=st.floats(allow_nan=False)))
    def test_any_array(self, a):
        got, _ = checkpoint.loads(checkpoint.dumps({"x": a}))
        np.testing.assert_array_equal(got["x"], a)
        assert got["x"].shape == a.shape


class TestCorruption:
    def test_flipped_byte(self):
        blob = bytearray(checkpoint.dumps(_params()))
        blob[40] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum"):
            checkpoint.loads(bytes(blob))

    def test_truncated(self):
        blob = checkpoint.dumps(_params())
        with pytest.raises(CheckpointError):
            checkpoint.loads(blob[:-20])

    def test_wrong_magic(self):
        with pytest.raises(CheckpointError, match="not an imcgae"):
            checkpoint.loads(b"PK\x03\x04" + b"\x00" * 40)

    def test_trailing_bytes_with_valid_crc(self):
        body = checkpoint.dumps({})[:-4] + b"junk"
        with pytest.raises(CheckpointError, match="trailing"):
            checkpoint.loads(body + struct.pack("<I", zlib.crc32(body)))

    def test_short_body_with_valid_crc(self):
        body = checkpoint.dumps({"x": np.ones(3)})[:-12]
        with pytest.raises(CheckpointError, match="truncated"):
            checkpoint.loads(body + struct.pack("<I", zlib.crc32(body)))

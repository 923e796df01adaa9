"""Binary parameter container, format tag ``imcgae-ckpt-v1``.

Layout (all integers little-endian)::

    magic       15 bytes  b"imcgae-ckpt-v1\\n"
    meta_len    u32
    meta        meta_len bytes of UTF-8 JSON (free-form run metadata)
    n_params    u32
    n_params times:
        name_len  u16
        name      name_len bytes UTF-8
        ndim      u8
        dims      ndim x u64
        values    prod(dims) x f64, row-major
    crc32       u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"imcgae-ckpt-v1\n"


class CheckpointError(ValueError):
    pass


def dumps(params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)) + nb)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < len(MAGIC) + 12 or not blob.startswith(MAGIC):
        raise CheckpointError("not an imcgae-ckpt-v1 file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch, checkpoint is corrupted")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError("truncated checkpoint")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return params, meta


def save(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())

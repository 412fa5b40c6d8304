"""On-disk formats: TGT1 tensors, named-tensor containers, PGM/PPM images.

TGT1 layout: 4 magic bytes ``TGT1``, unsigned 32-bit little-endian rank,
then the extents (u32 LE each), then the data as little-endian float32 in
row-major order. Round-trips are bit-exact.

A container file is a concatenation of entries, each ``u32 LE name length
| utf-8 name | TGT1 blob``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TGT1"


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one TGT1 blob; returns (array, offset past the blob)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ValueError(f"not a TGT1 tensor at offset {offset}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    shape = struct.unpack_from(f"<{rank}I", buf, offset + 8)
    start = offset + 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    end = start + 4 * count
    if end > len(buf):
        raise ValueError("truncated TGT1 tensor")
    arr = np.frombuffer(buf[start:end], dtype="<f4").reshape(shape)
    return arr.copy(), end


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    arr, _ = tensor_from_bytes(Path(path).read_bytes())
    return arr


def write_named_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    parts = []
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(tensor_to_bytes(arr))
    Path(path).write_bytes(b"".join(parts))


def read_named_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    out: dict[str, np.ndarray] = {}
    offset = 0
    while offset < len(buf):
        (nlen,) = struct.unpack_from("<I", buf, offset)
        name = buf[offset + 4:offset + 4 + nlen].decode("utf-8")
        arr, offset = tensor_from_bytes(buf, offset + 4 + nlen)
        out[name] = arr
    return out


# ---------------------------------------------------------------------------
# netpbm images


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary PGM (P5), maxval 255. ``pixels`` is (H, W) uint8."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError(f"PGM pixels must be 2-D, got {pixels.shape}")
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def write_ppm(path, pixels: np.ndarray) -> None:
    """Binary PPM (P6), maxval 255. ``pixels`` is (H, W, 3) uint8."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"PPM pixels must be (H, W, 3), got {pixels.shape}")
    h, w = pixels.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def _read_netpbm(path, magic: bytes) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} file")
    # Header tokens: width, height, maxval; '#' comments allowed.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(buf[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(buf, dtype=np.uint8, count=h * w * channels, offset=pos)
    return data.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5")


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6")


def clip_to_u8(frames: np.ndarray) -> np.ndarray:
    """[0,1] float frames to uint8 with round-half-away rounding."""
    return np.clip(np.asarray(frames) * 255.0 + 0.5, 0.0, 255.0).astype(np.uint8)

"""Binary tensor and observation files, PPM images and image tensorization.

Tensor file layout (all little-endian)::

    b"RTEN1" | K: u32 | K extents: u64 | D values: f64, column-major

Observation file layout::

    b"ROBS1" | K: u32 | K extents: u64 | N: u64 | N*K 1-based indices: u64
             (one K-tuple per sample) | N values: f64
"""

from __future__ import annotations

import struct
from math import prod
from pathlib import Path
from typing import Sequence

import numpy as np

from .sampling import ObservationSet

TENSOR_MAGIC = b"RTEN1"
MASK_MAGIC = b"ROBS1"
MAX_ORDER = 64


class FormatError(ValueError):
    """Malformed file; `offset` is the byte position where parsing failed."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                              self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        if count > (len(self.buf) - self.pos) // item:
            raise FormatError(f"truncated {what}: need {count * item} bytes, "
                              f"{len(self.buf) - self.pos} left", self.pos)
        raw = self.take(count * item, what)
        return np.frombuffer(raw, dtype=dtype).copy()


def _read_header(r: _Reader, magic: bytes) -> tuple[int, ...]:
    got = r.take(len(magic), "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    pos = r.pos
    (K,) = struct.unpack("<I", r.take(4, "order"))
    if not 2 <= K <= MAX_ORDER:
        raise FormatError(f"unsupported tensor order {K}", pos)
    pos = r.pos
    dims = r.array("<u8", K, "extents")
    if np.any(dims == 0) or np.any(dims > 2 ** 40):
        raise FormatError(f"invalid extents {dims.tolist()}", pos)
    total = 1
    for d in dims:
        total *= int(d)
        if total > 2 ** 40:
            raise FormatError(f"tensor too large: extents {dims.tolist()}", pos)
    return tuple(int(d) for d in dims)


def _header(magic: bytes, dims: Sequence[int]) -> bytes:
    return magic + struct.pack("<I", len(dims)) + np.asarray(dims, dtype="<u8").tobytes()


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype=float)
    if t.ndim < 2:
        raise ValueError("tensor files store order >= 2")
    payload = np.asarray(t.reshape(-1, order="F"), dtype="<f8").tobytes()
    return _header(TENSOR_MAGIC, t.shape) + payload


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    r = _Reader(buf)
    dims = _read_header(r, TENSOR_MAGIC)
    vals = r.array("<f8", prod(dims), "payload")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return np.reshape(vals.astype(float), dims, order="F")


def mask_to_bytes(obs: ObservationSet) -> bytes:
    out = [_header(MASK_MAGIC, obs.dims), struct.pack("<Q", obs.N),
           np.ascontiguousarray(obs.indices, dtype="<u8").tobytes(),
           np.asarray(obs.y, dtype="<f8").tobytes()]
    return b"".join(out)


def mask_from_bytes(buf: bytes) -> ObservationSet:
    r = _Reader(buf)
    dims = _read_header(r, MASK_MAGIC)
    (N,) = struct.unpack("<Q", r.take(8, "sample count"))
    idx_pos = r.pos
    idx = r.array("<u8", N * len(dims), "indices").reshape(N, len(dims))
    ext = np.asarray(dims, dtype=np.uint64)
    bad = (idx < 1) | (idx > ext)
    if np.any(bad):
        n, m = np.argwhere(bad)[0]
        off = idx_pos + 8 * (int(n) * len(dims) + int(m))
        raise FormatError(f"sample {n + 1}: index {int(idx[n, m])} out of bounds for mode "
                          f"{m + 1} of extent {dims[m]}", off)
    y = r.array("<f8", N, "values")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return ObservationSet(dims, idx.astype(np.int64), y.astype(float))


def write_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_mask(path, obs: ObservationSet) -> None:
    Path(path).write_bytes(mask_to_bytes(obs))


def read_mask(path) -> ObservationSet:
    return mask_from_bytes(Path(path).read_bytes())


# ------------------------------------------------------------------ PPM


def _ppm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PPM header", start)
    return buf[start:pos], pos


def ppm_from_bytes(buf: bytes) -> np.ndarray:
    """Decode a binary (P6, maxval 255) PPM into an ``H x W x 3`` array in [0, 1]."""
    magic, pos = _ppm_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM: magic {magic!r}", 0)
    vals = []
    for what in ("width", "height", "maxval"):
        start = pos
        tok, pos = _ppm_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"invalid {what} {tok!r}", start)
        vals.append(int(tok))
    w, h, maxval = vals
    if w < 1 or h < 1:
        raise FormatError(f"invalid image size {w}x{h}", pos)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, expected 255", pos)
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PPM header", pos)
    pos += 1
    need = w * h * 3
    if len(buf) - pos < need:
        raise FormatError(f"truncated pixel data: need {need} bytes, {len(buf) - pos} left", pos)
    px = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return px.reshape(h, w, 3).astype(float) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round to 8-bit (halves away from zero)."""
    x = np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0
    return np.floor(x + 0.5).astype(np.uint8)


def ppm_to_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + quantize(img).tobytes()


def read_ppm(path) -> np.ndarray:
    return ppm_from_bytes(Path(path).read_bytes())


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(ppm_to_bytes(img))


# ------------------------------------------------------------------ VDT


def vdt_tensorize(img: np.ndarray, rows: Sequence[int] = (16, 32),
                  cols: Sequence[int] = (16, 32)) -> np.ndarray:
    """Split an ``H x W x C`` image into an ``(h1, w1, h2, w2, C)`` tensor.

    Pixel ``(a * h2 + b, c * w2 + e)`` lands at ``(a, c, b, e)``: the first
    two modes index the block, the next two the position inside it.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 3:
        raise ValueError(f"expected an H x W x C image, got shape {img.shape}")
    H, W, C = img.shape
    h1, h2 = rows
    w1, w2 = cols
    if h1 * h2 != H or w1 * w2 != W:
        raise ValueError(f"blocks {tuple(rows)} x {tuple(cols)} do not tile a {H}x{W} image")
    return img.reshape(h1, h2, w1, w2, C).transpose(0, 2, 1, 3, 4).copy()


def vdt_detensorize(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 5:
        raise ValueError(f"expected a fifth-order tensor, got order {t.ndim}")
    h1, w1, h2, w2, C = t.shape
    return t.transpose(0, 2, 1, 3, 4).reshape(h1 * h2, w1 * w2, C).copy()

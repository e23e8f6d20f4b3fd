"""Binary file formats for tensors, masks and PPM images.

DTF1 (dense tensor)::

    b"DTF1" | uint32 N | N x uint64 dims | prod(dims) x float64 payload

DMF1 (observation mask)::

    b"DMF1" | uint32 N | N x uint64 dims | uint64 observed_count | packed bits

All integers and floats are little-endian. Payload order is first index
fastest. Mask bits are packed least-significant-bit first and the final byte
is zero padded.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import DimOverflow, FormatError, MagicMismatch, Truncated
from .tensor import MAX_MODES

TENSOR_MAGIC = b"DTF1"
MASK_MAGIC = b"DMF1"


def _header(magic: bytes, dims) -> bytes:
    return magic + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)


def _read_header(buf: bytes, magic: bytes) -> tuple[tuple[int, ...], int]:
    if len(buf) < 8:
        raise Truncated("file shorter than its fixed header")
    if buf[:4] != magic:
        raise MagicMismatch(f"expected magic {magic!r}, found {buf[:4]!r}")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    if ndim < 1 or ndim > MAX_MODES:
        raise DimOverflow(f"{ndim} modes (supported: 1..{MAX_MODES})")
    end = 8 + 8 * ndim
    if len(buf) < end:
        raise Truncated("dimension vector is cut short")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 8)
    if any(d < 1 for d in dims):
        raise FormatError(f"dimensions must be positive, got {dims}")
    size = 1
    for d in dims:
        size *= d
        if size > 2 ** 40:
            raise DimOverflow(f"tensor of dims {dims} is too large")
    return tuple(int(d) for d in dims), end


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def tensor_to_bytes(t) -> bytes:
    t = np.asarray(t, dtype="<f8")
    if t.ndim < 1 or t.ndim > MAX_MODES:
        raise DimOverflow(f"{t.ndim} modes (supported: 1..{MAX_MODES})")
    return _header(TENSOR_MAGIC, t.shape) + t.reshape(-1, order="F").tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    dims, off = _read_header(buf, TENSOR_MAGIC)
    size = int(np.prod(dims))
    payload = len(buf) - off
    if payload < 8 * size:
        raise Truncated(f"header declares {size} entries, payload holds {payload // 8}")
    if payload > 8 * size:
        raise FormatError(f"{payload - 8 * size} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f8", count=size, offset=off)
    return data.astype(np.float64).reshape(dims, order="F")


def write_tensor(t, path) -> None:
    _atomic_write(path, tensor_to_bytes(t))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def mask_to_bytes(mask) -> bytes:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim < 1 or mask.ndim > MAX_MODES:
        raise DimOverflow(f"{mask.ndim} modes (supported: 1..{MAX_MODES})")
    bits = np.packbits(mask.reshape(-1, order="F"), bitorder="little")
    return (_header(MASK_MAGIC, mask.shape) + struct.pack("<Q", int(mask.sum()))
            + bits.tobytes())


def mask_from_bytes(buf: bytes) -> np.ndarray:
    dims, off = _read_header(buf, MASK_MAGIC)
    if len(buf) < off + 8:
        raise Truncated("observed count missing")
    (count,) = struct.unpack_from("<Q", buf, off)
    off += 8
    size = int(np.prod(dims))
    nbytes = (size + 7) // 8
    if len(buf) - off < nbytes:
        raise Truncated(f"mask payload needs {nbytes} bytes, found {len(buf) - off}")
    if len(buf) - off > nbytes:
        raise FormatError("trailing bytes after mask payload")
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=off),
                         bitorder="little")
    if bits[size:].any():
        raise FormatError("nonzero padding bits")
    mask = bits[:size].astype(bool)
    if int(mask.sum()) != count:
        raise FormatError(f"header says {count} observed entries, bits say {int(mask.sum())}")
    return mask.reshape(dims, order="F")


def write_mask(mask, path) -> None:
    _atomic_write(path, mask_to_bytes(mask))


def read_mask(path) -> np.ndarray:
    return mask_from_bytes(Path(path).read_bytes())


def apply_mask_file(t, path) -> np.ndarray:
    """Read a DMF1 mask and check that it matches the tensor ``t``."""
    mask = read_mask(path)
    if mask.shape != np.shape(t):
        raise FormatError(f"mask dims {mask.shape} do not match tensor dims {np.shape(t)}")
    if not mask.any():
        raise ValueError("mask has no observed entries")
    return mask


def derive_mask_from_sentinel(t, sentinel: float = float("nan")) -> np.ndarray:
    """Observed where ``t`` is finite and differs from ``sentinel``."""
    t = np.asarray(t, dtype=np.float64)
    mask = np.isfinite(t)
    if not np.isnan(sentinel):
        mask &= t != sentinel
    if not mask.any():
        raise ValueError("every entry is missing")
    return mask


# --- PPM (P6) -------------------------------------------------------------

def _ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError("malformed PPM header")
        tokens.append(buf[start:i])
    # exactly one whitespace byte separates the header from the raster
    if i >= n or not buf[i:i + 1].isspace():
        raise FormatError("malformed PPM header")
    return tokens, i + 1


def image_from_ppm_bytes(buf: bytes) -> np.ndarray:
    tokens, off = _ppm_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"only binary PPM (P6) is supported, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(tok) for tok in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-numeric PPM header field") from exc
    if width < 1 or height < 1:
        raise FormatError("PPM dimensions must be positive")
    if not 0 < maxval < 256:
        raise FormatError(f"unsupported maxval {maxval}")
    need = width * height * 3
    if len(buf) - off < need:
        raise Truncated(f"PPM raster needs {need} bytes, found {len(buf) - off}")
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    return raster.reshape(height, width, 3).astype(np.float64) / maxval


def image_to_ppm_bytes(img) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"image must be H x W x 3, got {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def read_image_ppm(path) -> np.ndarray:
    """H x W x 3 tensor with values in [0, 1]."""
    return image_from_ppm_bytes(Path(path).read_bytes())


def write_image_ppm(img, path) -> None:
    """Clamp to [0, 1] and quantize to 8 bits per channel."""
    _atomic_write(path, image_to_ppm_bytes(img))

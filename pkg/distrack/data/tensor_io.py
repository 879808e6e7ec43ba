"""
Minimal tensor container ("MMT1") and PGM previews.

Header: 4-byte magic, u8 dtype code, u8 ndim, ndim x u32 dims, all
little-endian, followed by the row-major payload.
"""

import struct
from pathlib import Path

import numpy as np

from distrack.errors import CorruptFile, EmptyImage, NotATensorFile, UnsupportedDtype
from distrack.utils import atomic_write_bytes

MAGIC = b"MMT1"

DTYPE_CODES: dict[int, np.dtype] = {
    1: np.dtype("<u2"),
    2: np.dtype("<f4"),
    3: np.dtype("u1"),
}
CODE_FOR_KIND = {(dtype.kind, dtype.itemsize): code for code, dtype in DTYPE_CODES.items()}

U32_MAX = 2**32 - 1


def dtype_code(dtype: np.dtype) -> int:
    dtype = np.dtype(dtype)
    code = CODE_FOR_KIND.get((dtype.kind, dtype.itemsize))
    if code is None:
        raise UnsupportedDtype(f"no tensor-file code for dtype {dtype}")
    return code


def encode_tensor(data: np.ndarray, dtype=None) -> bytes:
    if dtype is not None:
        data = np.asarray(data).astype(dtype, copy=False)
    data = np.asarray(data)

    code = dtype_code(data.dtype)
    if data.ndim not in (2, 3):
        raise UnsupportedDtype(f"tensors must have 2 or 3 dims, got {data.ndim}")
    if any(dim > U32_MAX for dim in data.shape):
        raise UnsupportedDtype(f"dims {data.shape} do not fit in u32")

    header = MAGIC + struct.pack("<BB", code, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    payload = np.ascontiguousarray(data, dtype=DTYPE_CODES[code]).tobytes()
    return header + payload


def decode_tensor(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise NotATensorFile(f"{source} does not start with {MAGIC!r}")

    code, ndim = struct.unpack_from("<BB", raw, 4)
    if code not in DTYPE_CODES:
        raise UnsupportedDtype(f"{source} has unknown dtype code {code}")
    if ndim not in (2, 3):
        raise CorruptFile(f"{source} declares {ndim} dims")

    header_len = 6 + 4 * ndim
    if len(raw) < header_len:
        raise CorruptFile(f"{source} has a truncated header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 6)

    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[header_len:]
    if len(payload) != expected:
        raise CorruptFile(
            f"{source} payload is {len(payload)} bytes, expected {expected} for dims {dims}"
        )

    # native-endian copy so callers never see byte-swapped views
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path: Path | str, data: np.ndarray, dtype=None):
    atomic_write_bytes(path, encode_tensor(data, dtype))


def read_tensor(path: Path | str) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), source=str(path))


def write_stack(path: Path | str, stack: np.ndarray, dtype=None):
    """
    Write a (frames, H, W) stack. On disk the frame index is the third
    dimension, i.e. dims are (H, W, frames).
    """
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise UnsupportedDtype(f"stacks must be (frames, H, W), got shape {stack.shape}")
    write_tensor(path, np.moveaxis(stack, 0, -1), dtype)


def read_stack(path: Path | str) -> np.ndarray:
    data = read_tensor(path)
    if data.ndim == 2:
        return data[None]
    return np.ascontiguousarray(np.moveaxis(data, -1, 0))


def encode_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise EmptyImage(f"cannot render an image of shape {image.shape}")

    if image.dtype == np.uint8:
        maxval, payload = 255, image.tobytes()
    elif image.dtype == np.uint16:
        # PGM stores 16-bit samples most significant byte first
        maxval, payload = 65535, image.astype(">u2").tobytes()
    else:
        raise UnsupportedDtype(f"PGM needs uint8 or uint16 pixels, got {image.dtype}")

    height, width = image.shape
    return f"P5\n{width} {height}\n{maxval}\n".encode("ascii") + payload


def write_pgm(path: Path | str, image: np.ndarray):
    atomic_write_bytes(path, encode_pgm(image))


GOLDEN_RATIO_CONJUGATE = 0.6180339887498949


def label_palette(labels: np.ndarray) -> np.ndarray:
    """Deterministic label -> gray mapping; background stays black."""
    labels = np.asarray(labels)
    phase = np.mod(labels.astype(np.float64) * GOLDEN_RATIO_CONJUGATE, 1.0)
    gray = (48 + np.floor(phase * 207)).astype(np.uint8)
    gray[labels == 0] = 0
    return gray


def to_gray8(values: np.ndarray) -> np.ndarray:
    """Min-max scale a real-valued map to 8 bits (constant maps render black)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyImage("cannot render an empty map")
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255).astype(np.uint8)


def render_kymograph(frames: np.ndarray, separator: int = 1) -> np.ndarray:
    """Successive frames placed side by side, separated by white columns."""
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise EmptyImage(f"kymograph needs a non-empty (frames, H, W) stack, got {frames.shape}")

    num_frames, height, width = frames.shape
    white = np.iinfo(frames.dtype).max if frames.dtype.kind in "ui" else 1.0
    out = np.full(
        (height, num_frames * width + (num_frames - 1) * separator), white, dtype=frames.dtype
    )
    for index in range(num_frames):
        start = index * (width + separator)
        out[:, start : start + width] = frames[index]
    return out

"""Little-endian raster files: ``magic | u32 height | u32 width | [extra] | data``."""

import struct

import numpy as np


class FormatError(ValueError):
    """A file does not follow its declared binary layout."""


def write_raster(path, magic, array, dtype, extra=b""):
    array = np.ascontiguousarray(array, dtype=dtype)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", array.shape[0], array.shape[1]))
        fh.write(extra)
        fh.write(array.tobytes(order="C"))


def read_raster(path, magic, dtype, extra_fmt="", trailing_shape=()):
    """Read a raster written by :func:`write_raster`.

    Returns ``(array, extra_values)``.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic {raw[:len(magic)]!r}, expected {magic!r}")
    fmt = "<II" + extra_fmt
    head = len(magic) + struct.calcsize(fmt)
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header")
    fields = struct.unpack(fmt, raw[len(magic):head])
    h, w, extra = fields[0], fields[1], fields[2:]
    dt = np.dtype(dtype)
    shape = (h, w) + tuple(trailing_shape)
    expected = int(np.prod(shape)) * dt.itemsize
    if len(raw) - head != expected:
        raise FormatError(f"{path}: payload has {len(raw) - head} bytes, header implies {expected}")
    return np.frombuffer(raw[head:], dtype=dt).reshape(shape).copy(), extra

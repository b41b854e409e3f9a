"""NDT1 binary tensor format.

Layout (little-endian): magic ``b"NDT1"``, u8 rank, ``rank`` x u64 dims, then
``prod(dims)`` float64 values in row-major order.
"""
import io
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"NDT1"


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def write_tensor(f, array):
    a = np.asarray(array, dtype="<f8", order="C")
    if a.ndim > 255:
        raise FormatError(f"rank {a.ndim} exceeds NDT1 limit of 255")
    f.write(MAGIC)
    f.write(struct.pack("<B", a.ndim))
    f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    f.write(a.tobytes())


def read_tensor(f):
    magic = _read_exact(f, 4, "NDT1 magic")
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
    shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, "dims"))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(f, 8 * count, "tensor payload"), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def dumps(array):
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def loads(blob):
    return read_tensor(io.BytesIO(blob))


def save(path, array):
    with open(path, "wb") as f:
        write_tensor(f, array)


def load(path):
    with open(path, "rb") as f:
        return read_tensor(f)

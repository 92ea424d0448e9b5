"""Raw tensor files.

Layout (all little-endian)::

    magic     4 bytes  b"S2VT"
    version   uint32   1
    dtype     uint32   code from DTYPE_CODES
    rank      uint32
    extents   rank x int64
    payload   prod(extents) scalars
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"S2VT"
VERSION = 1
DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("u1"),
    4: np.dtype("<i8"),
    5: np.dtype("<i4"),
}
_PREFIX = struct.Struct("<4sIII")


class TensorFileError(ValueError):
    pass


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8)
    code = next(
        (c for c, dt in DTYPE_CODES.items() if (dt.kind, dt.itemsize) == (array.dtype.kind, array.dtype.itemsize)),
        None,
    )
    if code is None:
        raise TensorFileError(f"unsupported dtype {array.dtype}")
    header = _PREFIX.pack(MAGIC, VERSION, code, array.ndim) + struct.pack(f"<{array.ndim}q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _PREFIX.size:
        raise TensorFileError(f"header truncated at offset {len(buf)}: need {_PREFIX.size} bytes")
    magic, version, code, rank = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise TensorFileError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version} at offset 4")
    if code not in DTYPE_CODES:
        raise TensorFileError(f"unknown dtype code {code} at offset 8")
    if rank > 32:
        raise TensorFileError(f"implausible rank {rank} at offset 12")
    ext_end = _PREFIX.size + 8 * rank
    if len(buf) < ext_end:
        raise TensorFileError(f"extents truncated at offset {len(buf)}: need {ext_end} bytes")
    shape = struct.unpack_from(f"<{rank}q", buf, _PREFIX.size)
    for i, n in enumerate(shape):
        if n < 0:
            raise TensorFileError(f"negative extent {n} at offset {_PREFIX.size + 8 * i}")
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(buf) - ext_end
    if actual != expected:
        raise TensorFileError(f"payload length mismatch: expected {expected} bytes, got {actual}")
    return np.frombuffer(buf, dtype=dtype, offset=ext_end).reshape(shape).copy()


def write_tensor_file(array: np.ndarray, path: "str | os.PathLike") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensor(array))
    os.replace(tmp, path)
    return path


def read_tensor_file(path: "str | os.PathLike") -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())

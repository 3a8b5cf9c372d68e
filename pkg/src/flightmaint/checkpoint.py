import struct
from collections.abc import Mapping
from pathlib import Path
from typing import BinaryIO

import numpy as np

from flightmaint.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from flightmaint.errors import CheckpointError
from flightmaint.utils import FloatArray

_HEADER = struct.Struct("<II")
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_DTYPE = {dtype: tag for tag, dtype in _DTYPE_TAGS.items()}


def save_checkpoint(path: Path, arrays: Mapping[str, FloatArray]) -> None:
    """Write named arrays to the versioned binary checkpoint format.

    Layout: magic, then little-endian (version, record count); each record holds the name
    length, UTF-8 name, dtype tag, rank, extents and the raw little-endian values.

    Args:
        path: Destination file.
        arrays: Parameter name to array; only float32 and float64 are supported.

    Raises:
        CheckpointError: If an array has an unsupported dtype.
    """
    with path.open("wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(_HEADER.pack(CHECKPOINT_VERSION, len(arrays)))
        for name, array in arrays.items():
            dtype = np.dtype(array.dtype).newbyteorder("<")
            if dtype not in _TAG_FOR_DTYPE:
                raise CheckpointError(f"Unsupported dtype {array.dtype} for parameter '{name}'")
            encoded = name.encode("utf-8")
            fp.write(struct.pack("<I", len(encoded)))
            fp.write(encoded)
            fp.write(struct.pack("<BB", _TAG_FOR_DTYPE[dtype], array.ndim))
            fp.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fp.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def _read(fp: BinaryIO, size: int, path: Path) -> bytes:
    chunk = fp.read(size)
    if len(chunk) != size:
        raise CheckpointError(f"Checkpoint {path} is truncated")
    return chunk


def load_checkpoint(path: Path) -> dict[str, FloatArray]:
    """Read a checkpoint written by `save_checkpoint`, preserving order and bytes exactly.

    Args:
        path: Checkpoint file.

    Returns:
        Parameter name to array, in file order.

    Raises:
        CheckpointError: If the magic, version or record structure is invalid.
    """
    arrays: dict[str, FloatArray] = {}
    with path.open("rb") as fp:
        if fp.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a flightmaint checkpoint")
        version, count = _HEADER.unpack(_read(fp, _HEADER.size, path))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
        for _ in range(count):
            (name_length,) = struct.unpack("<I", _read(fp, 4, path))
            name = _read(fp, name_length, path).decode("utf-8")
            tag, rank = struct.unpack("<BB", _read(fp, 2, path))
            if tag not in _DTYPE_TAGS:
                raise CheckpointError(f"Unknown dtype tag {tag} for parameter '{name}'")
            shape = struct.unpack(f"<{rank}I", _read(fp, 4 * rank, path))
            dtype = _DTYPE_TAGS[tag]
            raw = _read(fp, int(np.prod(shape, dtype=np.int64)) * dtype.itemsize, path)
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        if fp.read(1):
            raise CheckpointError(f"Checkpoint {path} has trailing data")
    return arrays

"""Binary checkpoint format for named float32 tensors.

Layout (all integers unsigned 64-bit little-endian)::

    b"CALVIN1" | count | { name_len | utf-8 name | rank | extents... | float32 LE data }*

Records are written in mapping order, so saving the same mapping twice yields
identical bytes.
"""
from __future__ import annotations

import logging
import os
from collections import OrderedDict
from typing import Mapping, Union

import numpy as np

from .errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"CALVIN1"
_U64 = np.dtype("<u8")
_F32 = np.dtype("<f4")

PathLike = Union[str, "os.PathLike[str]"]


def _u64(value: int) -> bytes:
    return np.array([value], dtype=_U64).tobytes()


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, _u64(len(tensors))]
    for name, value in tensors.items():
        array = np.asarray(value)
        if array.dtype != np.float32:
            array = array.astype(np.float32)
        encoded = name.encode("utf-8")
        chunks.append(_u64(len(encoded)))
        chunks.append(encoded)
        chunks.append(_u64(array.ndim))
        chunks.append(np.asarray(array.shape, dtype=_U64).tobytes())
        chunks.append(np.ascontiguousarray(array, dtype=_F32).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self._payload = payload
        self._offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self._offset + size
        if end > len(self._payload):
            raise CheckpointError(f"Truncated checkpoint while reading {what}")
        chunk = self._payload[self._offset:end]
        self._offset = end
        return chunk

    def u64(self, what: str, count: int = 1) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, what), dtype=_U64)

    @property
    def exhausted(self) -> bool:
        return self._offset == len(self._payload)


def loads(payload: bytes) -> "OrderedDict[str, np.ndarray]":
    reader = _Reader(payload)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("Not a CALVIN1 checkpoint (bad magic)")
    count = int(reader.u64("count")[0])
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        name_len = int(reader.u64("name length")[0])
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("Parameter name is not valid UTF-8") from exc
        rank = int(reader.u64("rank")[0])
        shape = tuple(int(x) for x in reader.u64("extents", rank)) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(reader.take(4 * size, f"data of {name}"), dtype=_F32)
        if name in tensors:
            raise CheckpointError("Duplicate parameter", name)
        tensors[name] = data.astype(np.float32).reshape(shape)
    if not reader.exhausted:
        raise CheckpointError("Trailing bytes after last checkpoint record")
    return tensors


def save(path: PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    payload = dumps(tensors)
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(payload)
    logger.info(
        "Checkpoint saved",
        extra={"event": "checkpoint_saved", "path": os.fspath(path), "tensors": len(tensors)},
    )


def load(path: PathLike) -> "OrderedDict[str, np.ndarray]":
    try:
        with open(path, "rb") as handle:
            payload = handle.read()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {os.fspath(path)}") from exc
    return loads(payload)

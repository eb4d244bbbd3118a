"""Binary tensor blob codec.

Layout (all integers little-endian)::

    magic    4 bytes  b"TRCE"
    version  u16
    repeated until end of file:
        name_len  u16
        name      name_len bytes, UTF-8
        rank      u8
        dims      rank x u32
        payload   prod(dims) x f32

Tensors are written in name order, so equal mappings encode to equal bytes.
"""

import logging
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from ..errors import IngestionError

logger = logging.getLogger(__name__)

MAGIC = b"TRCE"
VERSION = 1
_HEADER = struct.Struct("<4sH")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named tensors; values are stored as 32-bit floats."""
    chunks = [_HEADER.pack(MAGIC, VERSION)]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw_name = name.encode("utf-8")
        chunks.append(_NAME_LEN.pack(len(raw_name)))
        chunks.append(raw_name)
        chunks.append(_RANK.pack(arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_tensors(data: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    """Parse a blob back into float64 arrays keyed by name."""
    if len(data) < _HEADER.size:
        raise IngestionError("truncated tensor blob header", source=source)
    magic, version = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise IngestionError(f"bad magic {magic!r}", source=source)
    if version != VERSION:
        raise IngestionError(f"unsupported blob version {version}", source=source)

    out: dict[str, np.ndarray] = {}
    offset = _HEADER.size
    try:
        while offset < len(data):
            (name_len,) = _NAME_LEN.unpack_from(data, offset)
            offset += _NAME_LEN.size
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = _RANK.unpack_from(data, offset)
            offset += _RANK.size
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            if name in out:
                raise IngestionError("duplicate tensor", source=source, locator=name)
            out[name] = payload.astype(np.float64).reshape(dims)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise IngestionError(f"corrupt tensor blob at byte {offset}: {exc}", source=source) from None
    return out


def write_tensors(path: Path, tensors: Mapping[str, np.ndarray]) -> None:
    path.write_bytes(encode_tensors(tensors))
    logger.debug(f"Wrote {len(tensors)} tensors to {path}")


def read_tensors(path: Path) -> dict[str, np.ndarray]:
    if not path.exists():
        raise IngestionError("file not found", source=str(path))
    return decode_tensors(path.read_bytes(), source=path.name)

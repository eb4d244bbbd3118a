"""Line-delimited JSON records (one pydantic model per line, UTF-8)."""

import logging
from collections.abc import Iterable
from pathlib import Path
from typing import Any

from pydantic import BaseModel, TypeAdapter, ValidationError

from ..errors import IngestionError

logger = logging.getLogger(__name__)


def encode_jsonl(records: Iterable[BaseModel]) -> bytes:
    return "".join(record.model_dump_json() + "\n" for record in records).encode("utf-8")


def write_jsonl(path: Path, records: Iterable[BaseModel]) -> None:
    path.write_bytes(encode_jsonl(records))


def decode_jsonl(data: bytes, record_type: Any, source: str) -> list[Any]:
    """Parse every non-blank line; failures cite ``source:line``."""
    adapter: TypeAdapter[Any] = TypeAdapter(record_type)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"not UTF-8: {exc}", source=source) from None
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(adapter.validate_json(line))
        except ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(p) for p in first["loc"])
            raise IngestionError(f"{where}: {first['msg']}" if where else first["msg"], source=source, locator=str(lineno)) from None
    return out


def read_jsonl(path: Path, record_type: Any) -> list[Any]:
    if not path.exists():
        raise IngestionError("file not found", source=str(path))
    records = decode_jsonl(path.read_bytes(), record_type, path.name)
    logger.debug(f"Read {len(records)} records from {path}")
    return records

"""Self-describing parameter checkpoints.

File layout: one JSON header line, then every entry's values as raw
little-endian float64 in header order.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from src.utils.errors import ConfigMismatch, InvalidConfig

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int


class CheckpointHeader(BaseModel):
    version: int = CHECKPOINT_VERSION
    config_hash: str
    config: Dict[str, Any]
    entries: List[CheckpointEntry]


def encode_checkpoint(arrays: Dict[str, np.ndarray], config_hash: str, config: Dict[str, Any]) -> bytes:
    entries, payload, offset = [], [], 0
    for name, array in arrays.items():
        data = np.ascontiguousarray(array, dtype="<f8")
        entries.append(CheckpointEntry(name=name, shape=list(data.shape), offset=offset))
        payload.append(data.tobytes())
        offset += data.size
    header = CheckpointHeader(config_hash=config_hash, config=config, entries=entries)
    line = json.dumps(header.model_dump(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return line + b"\n" + b"".join(payload)


def decode_checkpoint(blob: bytes) -> Tuple[CheckpointHeader, Dict[str, np.ndarray]]:
    newline = blob.find(b"\n")
    if newline < 0:
        raise InvalidConfig("checkpoint has no header line")
    try:
        header = CheckpointHeader.model_validate_json(blob[:newline])
    except ValidationError as e:
        raise InvalidConfig(f"malformed checkpoint header: {e}")
    if header.version != CHECKPOINT_VERSION:
        raise InvalidConfig(f"unsupported checkpoint version {header.version}")
    values = np.frombuffer(blob[newline + 1:], dtype="<f8")
    arrays = {}
    for entry in header.entries:
        size = int(np.prod(entry.shape, dtype=np.int64))
        if entry.offset + size > values.size:
            raise InvalidConfig(f"checkpoint payload is truncated at {entry.name}")
        arrays[entry.name] = values[entry.offset:entry.offset + size].reshape(entry.shape).astype(np.float64)
    return header, arrays


def save_checkpoint(path: str, arrays: Dict[str, np.ndarray], config_hash: str, config: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(arrays, config_hash, config))
    logger.info(f"Saved checkpoint {path} ({len(arrays)} entries, hash {config_hash[:12]})")


def load_checkpoint(path: str, expected_hash: Optional[str] = None) -> Tuple[CheckpointHeader, Dict[str, np.ndarray]]:
    """Read a checkpoint, refusing it when its config hash differs from ``expected_hash``.

    Raises:
        ConfigMismatch: If the stored hash differs from ``expected_hash``
        InvalidConfig: If the file is malformed
    """
    header, arrays = decode_checkpoint(Path(path).read_bytes())
    if expected_hash is not None and header.config_hash != expected_hash:
        raise ConfigMismatch(f"checkpoint {path} was trained with config {header.config_hash[:12]}, "
                             f"expected {expected_hash[:12]}")
    return header, arrays

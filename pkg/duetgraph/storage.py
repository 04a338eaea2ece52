"""
Binary artifact container: a JSON header followed by little-endian float32 blocks.

Layout:
    8 bytes   magic b"DUETGRF\\x00"
    8 bytes   header length, little-endian unsigned
    N bytes   UTF-8 JSON header (sorted keys)
    ...       float32 blocks, back to back, in header order
"""

import json
from pathlib import Path

import numpy as np


MAGIC = b"DUETGRF\x00"
BLOCK_DTYPE = np.dtype("<f4")


class StorageError(Exception):
    """Exception raised for unreadable or mismatched artifact files."""
    pass


def dumps_json(data) -> str:
    """Deterministic JSON text used for every header, manifest and report."""
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False)


def write_blocks(path, kind: str, header: dict, blocks: dict) -> Path:
    """
    Write an artifact file.

    Args:
        path: Destination file
        kind: Format tag, e.g. "duetgraph.sim/1"
        header: JSON-serializable metadata
        blocks: Mapping of block name to array; stored as float32 in insertion order

    Returns:
        Path: The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    payloads = []
    manifest = []
    offset = 0
    for name, array in blocks.items():
        data = np.ascontiguousarray(np.asarray(array, dtype=BLOCK_DTYPE))
        raw = data.tobytes(order="C")
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)

    full_header = dict(header)
    full_header["format"] = kind
    full_header["blocks"] = manifest
    encoded = dumps_json(full_header).encode("utf-8")

    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(len(encoded).to_bytes(8, "little"))
        fh.write(encoded)
        for raw in payloads:
            fh.write(raw)
    return path


def read_blocks(path, kind: str = None):
    """
    Read an artifact file.

    Args:
        path: Source file
        kind: Expected format tag; None accepts any

    Returns:
        tuple: (header dict, dict of block name to float32 array)

    Raises:
        StorageError: If the file is not a duetgraph artifact or has another format
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}")

    if len(raw) < 16 or raw[:8] != MAGIC:
        raise StorageError(f"{path} is not a duetgraph artifact")
    header_len = int.from_bytes(raw[8:16], "little")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StorageError(f"Corrupt header in {path}: {e}")

    if kind is not None and header.get("format") != kind:
        raise StorageError(f"{path} has format {header.get('format')!r}, expected {kind!r}")

    body = raw[16 + header_len:]
    blocks = {}
    for entry in header.get("blocks", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        stop = start + count * BLOCK_DTYPE.itemsize
        if stop > len(body):
            raise StorageError(f"Block {entry['name']!r} in {path} is truncated")
        blocks[entry["name"]] = np.frombuffer(body[start:stop], dtype=BLOCK_DTYPE).reshape(shape)
    return header, blocks


def peek_format(path) -> str:
    """Return the format tag of an artifact without loading its blocks."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            prefix = fh.read(16)
            if len(prefix) < 16 or prefix[:8] != MAGIC:
                raise StorageError(f"{path} is not a duetgraph artifact")
            header = json.loads(fh.read(int.from_bytes(prefix[8:16], "little")).decode("utf-8"))
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}")
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StorageError(f"Corrupt header in {path}: {e}")
    return header.get("format", "")

"""Deterministic array container used for datasets and checkpoints.

File layout::

    <magic line>\\n
    <header: one line of JSON, keys sorted>\\n
    <payload: raw little-endian arrays back to back>

The header holds caller metadata under ``"meta"``, an ``"arrays"`` table of
``[name, dtype, shape, offset, nbytes]`` rows, ``"payload_bytes"`` and the
SHA-256 hex digest of the payload under ``"sha256"``. Writing the same content
twice yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CorruptDatasetError


def _le(dtype: np.dtype) -> np.dtype:
    return dtype.newbyteorder("<") if dtype.byteorder not in ("|", "<") else dtype


def dumps(magic: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(_le(arr.dtype), copy=False)
        raw = arr.tobytes()
        table.append([name, arr.dtype.str, list(arr.shape), offset, len(raw)])
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"meta": meta, "arrays": table, "payload_bytes": len(payload),
              "sha256": hashlib.sha256(payload).hexdigest()}
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    return f"{magic}\n{text}\n".encode() + payload


def loads(blob: bytes, magic: str, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    try:
        first, rest = blob.split(b"\n", 1)
        header_line, payload = rest.split(b"\n", 1)
        if first.decode() != magic:
            raise CorruptDatasetError(f"{source}: bad magic {first[:40]!r}, expected {magic!r}")
        header = json.loads(header_line)
        expected_bytes, digest, table = header["payload_bytes"], header["sha256"], header["arrays"]
    except (ValueError, UnicodeDecodeError, KeyError, TypeError) as exc:
        raise CorruptDatasetError(f"{source}: unreadable header ({exc})") from None
    if len(payload) != expected_bytes:
        raise CorruptDatasetError(f"{source}: payload is {len(payload)} bytes, header says {expected_bytes}")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CorruptDatasetError(f"{source}: checksum mismatch")
    arrays = {}
    for name, dtype, shape, offset, nbytes in table:
        arr = np.frombuffer(payload, dtype=np.dtype(dtype), count=nbytes // np.dtype(dtype).itemsize, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
    return header["meta"], arrays


def save(path, magic: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write the archive and return its payload checksum."""
    path = Path(path)
    blob = dumps(magic, meta, arrays)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return json.loads(blob.split(b"\n", 2)[1])["sha256"]


def load(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"no such file: {path}") from None
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    return loads(blob, magic, str(path))

"""Flat tensor container shared by policy checkpoints and proxy weights.

Layout::

    bytes 0..7     little-endian uint64: length N of the JSON header
    bytes 8..8+N   UTF-8 JSON header
    rest           payload, every tensor as contiguous little-endian float64

Header::

    {"format": "crystalflow-tensors", "version": 1,
     "meta": {...free-form JSON...},
     "tensors": {"name": {"shape": [..], "offset": int, "nbytes": int}, ...}}

Offsets are relative to the start of the payload. Tensors are written in
insertion order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "crystalflow-tensors"
VERSION = 1
_DTYPE = np.dtype("<f8")


class TensorFormatError(ValueError):
    pass


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    entries = {}
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries[name] = {"shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)}
        chunks.append(data)
        offset += len(data)
    header = {"format": FORMAT, "version": VERSION, "meta": dict(meta or {}), "tensors": entries}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(raw)) + raw + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 8:
        raise TensorFormatError("truncated container")
    (n,) = struct.unpack("<Q", blob[:8])
    if 8 + n > len(blob):
        raise TensorFormatError("header length exceeds file size")
    try:
        header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"unreadable header: {exc}") from None
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise TensorFormatError(f"not a {FORMAT} v{VERSION} container")
    payload = memoryview(blob)[8 + n :]
    tensors = {}
    # the header is written with sorted keys, so payload order comes from the offsets
    for name, info in sorted(header["tensors"].items(), key=lambda kv: kv[1]["offset"]):
        shape = tuple(info["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if nbytes != info["nbytes"] or info["offset"] + nbytes > len(payload):
            raise TensorFormatError(f"tensor {name!r}: size does not match its shape")
        arr = np.frombuffer(payload[info["offset"] : info["offset"] + nbytes], dtype=_DTYPE)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return tensors, header.get("meta", {})


def save(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n).decode("utf-8"))

"""Writer/reader for the neutral binary tensor container.

This is an independent implementation of the documented format, kept free of
any engine imports so the exporter stands alone. Layout: 8-byte magic, u32 LE
format version (=1), u64 LE JSON header length H, H bytes of canonical UTF-8
JSON (sorted keys, compact separators), then little-endian f32 row-major
tensor payloads at 64-byte-aligned payload-relative offsets.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ExportError

VERSION = 1
ALIGN = 64
CHECKPOINT_MAGIC = b"SPADECKP"


def _aligned(offset: int) -> int:
    return (offset + ALIGN - 1) // ALIGN * ALIGN


def write_container(path, magic: bytes, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Byte-deterministic for identical inputs: stable tensor order as given,
    canonical JSON header, fixed alignment padding."""
    if len(magic) != 8:
        raise ExportError(f"magic must be 8 bytes, got {magic!r}")
    entries = []
    offset = 0
    payloads = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        offset = _aligned(offset)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "f32"})
        raw = arr.astype("<f4").tobytes()
        payloads.append((offset, raw))
        offset += len(raw)
    header = dict(meta)
    header["tensors"] = entries
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        pos = 0
        for off, raw in payloads:
            f.write(b"\x00" * (off - pos))
            f.write(raw)
            pos = off + len(raw)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as f:
        got = f.read(8)
        if got != magic:
            raise ExportError(f"{path}: bad magic {got!r}, expected {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ExportError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    tensors = {}
    for entry in header.pop("tensors"):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        tensors[entry["name"]] = np.ascontiguousarray(arr).reshape(shape).astype(np.float32)
    return header, tensors

"""Binary container for datasets and checkpoints.

Layout (little-endian): magic "HNO1", format version u32, record count
u32, then per record: name length u16 + UTF-8 name, dtype code u8
(1=f32, 2=f64, 3=UTF-8 metadata blob), rank u8, extents u64 x rank,
payload bytes.  Metadata blobs are line-oriented ``key = value`` text.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagic, CorruptRecord, UnsupportedVersion

MAGIC = b"HNO1"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def write_container(path, records: dict) -> None:
    """Write named arrays (f32/f64) and strings (metadata blobs)."""
    names = list(records)
    if len(set(names)) != len(names):
        raise ValueError("record names must be unique")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            value = records[name]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            if isinstance(value, str):
                payload = value.encode("utf-8")
                fh.write(struct.pack("<BB", 3, 1))
                fh.write(struct.pack("<Q", len(payload)))
                fh.write(payload)
            else:
                arr = np.ascontiguousarray(value)
                if arr.dtype not in _CODES:
                    raise TypeError(
                        f"record {name!r}: only f32/f64 arrays supported, "
                        f"got {arr.dtype}")
                fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CorruptRecord(f"truncated file while reading {what}")
    return buf


def read_container(path) -> dict:
    """Read a container back; arrays round-trip bit-exactly."""
    records = {}
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise BadMagic(f"{path}: not a container file (bad magic)")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise UnsupportedVersion(f"{path}: format version {version}")
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {i}"))
            name = _read_exact(fh, name_len, f"record {i} name").decode("utf-8")
            code, rank = struct.unpack("<BB", _read_exact(fh, 2, name))
            extents = struct.unpack(
                f"<{rank}Q", _read_exact(fh, 8 * rank, f"{name} extents"))
            if code == 3:
                if rank != 1:
                    raise CorruptRecord(f"{name}: metadata blob must be rank 1")
                records[name] = _read_exact(fh, extents[0], name).decode("utf-8")
            elif code in _DTYPES:
                dtype = _DTYPES[code]
                n_bytes = int(np.prod(extents)) * dtype.itemsize
                buf = _read_exact(fh, n_bytes, name)
                records[name] = np.frombuffer(buf, dtype=dtype).reshape(extents).copy()
            else:
                raise CorruptRecord(f"{name}: unknown dtype code {code}")
        if fh.read(1):
            raise CorruptRecord("trailing bytes after last record")
    return records


def format_metadata(entries: dict) -> str:
    """Serialize a flat dict to ``key = value`` lines (values as JSON)."""
    lines = [f"{key} = {json.dumps(value)}" for key, value in entries.items()]
    return "\n".join(lines) + "\n"


def parse_metadata(blob: str) -> dict:
    entries = {}
    for lineno, line in enumerate(blob.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if " = " not in line:
            raise CorruptRecord(f"metadata line {lineno}: expected 'key = value'")
        key, _, value = line.partition(" = ")
        entries[key.strip()] = json.loads(value)
    return entries

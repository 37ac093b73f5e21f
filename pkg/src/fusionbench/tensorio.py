"""Array and checkpoint serialization.

Binary format (one array per record):
    magic   4 bytes  b"ISOT"
    rank    u32 little-endian
    dims    rank * u64 little-endian
    data    prod(dims) float64 little-endian, C order

Text format (one array per file, lossless via repr round-trip):
    line 1       ISOT-TEXT
    line 2       space-separated dims (blank line for a scalar)
    line 3...    one value per line, repr(float)

Checkpoint format (named collection of arrays):
    magic     4 bytes  b"ISOC"
    json_len  u64 little-endian
    manifest  json_len bytes of UTF-8 JSON:
                  {"version": 1,
                   "tensors": {name: {"shape": [...], "offset": int}}}
    payload   concatenated ISOT records; offsets are relative to the
              start of the payload

Round trips are bit-exact: bytes are copied, never reformatted.
"""

from __future__ import annotations

import json
import struct
from typing import Iterable

import numpy as np

MAGIC_ARRAY = b"ISOT"
MAGIC_CHECKPOINT = b"ISOC"
MAX_RANK = 4


def _check_array(x: np.ndarray):
    if x.dtype != np.float64:
        raise TypeError(f"only float64 arrays are serialized, got {x.dtype}")
    if x.ndim > MAX_RANK:
        raise ValueError(f"rank {x.ndim} exceeds the format limit {MAX_RANK}")


def array_to_bytes(x: np.ndarray) -> bytes:
    _check_array(x)
    head = MAGIC_ARRAY + struct.pack("<I", x.ndim)
    head += struct.pack(f"<{x.ndim}Q", *x.shape) if x.ndim else b""
    return head + np.ascontiguousarray(x).astype("<f8", copy=False).tobytes()


def array_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at offset; returns (array, next_offset)."""
    if buf[offset : offset + 4] != MAGIC_ARRAY:
        raise ValueError("bad magic: not an ISOT record")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    if rank > MAX_RANK:
        raise ValueError(f"rank {rank} exceeds the format limit {MAX_RANK}")
    pos = offset + 8
    shape = struct.unpack_from(f"<{rank}Q", buf, pos) if rank else ()
    pos += 8 * rank
    count = 1
    for d in shape:
        count *= d
    end = pos + 8 * count
    if end > len(buf):
        raise ValueError("truncated ISOT record")
    data = np.frombuffer(buf[pos:end], dtype="<f8").reshape(shape)
    return data.astype(np.float64, copy=True), end


def save_array(path, x: np.ndarray):
    with open(path, "wb") as f:
        f.write(array_to_bytes(x))


def load_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = array_from_bytes(buf)
    if end != len(buf):
        raise ValueError("trailing bytes after ISOT record")
    return arr


def save_array_text(path, x: np.ndarray):
    _check_array(x)
    lines = ["ISOT-TEXT", " ".join(str(d) for d in x.shape)]
    lines.extend(repr(float(v)) for v in np.ascontiguousarray(x).ravel())
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_array_text(path) -> np.ndarray:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "ISOT-TEXT":
        raise ValueError("bad header: not an ISOT-TEXT file")
    shape = tuple(int(t) for t in lines[1].split())
    count = 1
    for d in shape:
        count *= d
    vals = [float(t) for t in lines[2 : 2 + count]]
    if len(vals) != count:
        raise ValueError("truncated ISOT-TEXT file")
    return np.array(vals, dtype=np.float64).reshape(shape)


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    """Write a named collection; iteration order is sorted by name so
    identical contents always produce identical bytes."""
    names = sorted(tensors)
    records = {}
    payload = bytearray()
    for name in names:
        records[name] = {
            "shape": list(tensors[name].shape),
            "offset": len(payload),
        }
        payload += array_to_bytes(tensors[name])
    manifest = json.dumps({"version": 1, "tensors": records}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC_CHECKPOINT)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        f.write(bytes(payload))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC_CHECKPOINT:
        raise ValueError("bad magic: not an ISOC checkpoint")
    (jlen,) = struct.unpack_from("<Q", buf, 4)
    manifest = json.loads(buf[12 : 12 + jlen].decode())
    if manifest.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    base = 12 + jlen
    out = {}
    for name, rec in manifest["tensors"].items():
        arr, _ = array_from_bytes(buf, base + rec["offset"])
        if list(arr.shape) != rec["shape"]:
            raise ValueError(f"shape mismatch for {name}")
        out[name] = arr
    return out


def checkpoint_names(path) -> list[str]:
    """Names only, without decoding payloads."""
    with open(path, "rb") as f:
        head = f.read(12)
        if head[:4] != MAGIC_CHECKPOINT:
            raise ValueError("bad magic: not an ISOC checkpoint")
        (jlen,) = struct.unpack("<Q", head[4:])
        manifest = json.loads(f.read(jlen).decode())
    return sorted(manifest["tensors"])

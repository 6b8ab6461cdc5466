"""Binary tensor-record serialization used for checkpoints and frame files.

Layout (all integers little-endian):

    magic   4 bytes  b"ESSL"
    version u32
    count   u32
    entry*  name_len u16, name UTF-8, rank u8, dims u32 * rank,
            payload float32 * prod(dims)

Entries round-trip bit-exactly; readers validate the magic, the version
and that the file is neither truncated nor over-long.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ESSL"
VERSION = 1

__all__ = ["MAGIC", "VERSION", "RecordFormatError", "write_tensor_records", "read_tensor_records"]


class RecordFormatError(ValueError):
    pass


def write_tensor_records(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays in insertion order."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=np.float32)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise RecordFormatError(f"record name too long: {name[:40]}...")
        if data.ndim > 0xFF:
            raise RecordFormatError(f"record rank too large: {data.ndim}")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))


def read_tensor_records(path) -> dict[str, np.ndarray]:
    """Read a record file back into an ordered name->float32 array map."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise RecordFormatError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise RecordFormatError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise RecordFormatError(f"{path}: unsupported version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise RecordFormatError(f"{path}: truncated while reading {what}")
        piece = blob[off : off + n]
        off += n
        return piece

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(4 * n_items, f"payload of {name}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        out[name] = arr
    if off != len(blob):
        raise RecordFormatError(f"{path}: {len(blob) - off} trailing bytes")
    return out

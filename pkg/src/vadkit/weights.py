"""Binary tensor container for model weights and feature dumps.

Layout, all little-endian:

    "VADW" | version u32 | count u32
    per tensor: name_len u16, name UTF-8, rank u8, dims u32 each, f32 data
    crc32 u32 over everything before it

Fixed endianness plus the checksum make files portable and corruption
fail loudly instead of as silently wrong inference.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import DuplicateError, FormatError

MAGIC = b"VADW"
FORMAT_VERSION = 1


def pack_tensors(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"tensor name too long ({len(encoded)} bytes)")
        # ascontiguousarray would silently promote rank 0 to rank 1
        data = np.asarray(arr, dtype="<f4")
        if data.ndim:
            data = np.ascontiguousarray(data)
        if data.ndim > 0xFF:
            raise FormatError(f"tensor rank {data.ndim} too large")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def unpack_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise FormatError("not a weight container (bad magic)")
    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise FormatError("weight container checksum mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    offset = 12
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", body, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            n_values = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = body[offset : offset + 4 * n_values]
            if len(raw) != 4 * n_values:
                raise FormatError("weight container truncated")
            offset += 4 * n_values
            if name in arrays:
                raise DuplicateError(f"tensor {name!r} appears twice")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    except struct.error:
        raise FormatError("weight container truncated") from None
    if offset != len(body):
        raise FormatError(f"{len(body) - offset} trailing bytes after last tensor")
    return arrays


def save_weights(path, arrays: dict[str, np.ndarray]) -> None:
    """Write atomically: full temp file then rename."""
    blob = pack_tensors(arrays)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return unpack_tensors(fh.read())

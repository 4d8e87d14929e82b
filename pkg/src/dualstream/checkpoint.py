"""
Binary named-tensor container.

Layout (all integers little-endian)::

    b"DSDN"  u32 version  u32 entry_count
    per entry:
        u32 name_length  name (utf-8)
        u8 dtype_code    u8 rank    rank x u64 dims
        payload          (C order, little-endian)

Text (vocabulary, config) is stored as ``uint8`` entries holding utf-8 bytes.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import FormatError

MAGIC = b"DSDN"
VERSION = 1
DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("<i4"): 4,
    np.dtype("u1"): 5,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


def text_entry(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def entry_text(arr: np.ndarray) -> str:
    return np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8")


def _canonical(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if dt not in DTYPE_CODES:
        raise FormatError(f"entry '{name}': unsupported dtype {arr.dtype}")
    return np.asarray(arr, dtype=dt, order="C")


def encode(entries: dict[str, np.ndarray]) -> bytes:
    """Serialise ``entries`` in key order."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name in sorted(entries):
        arr = _canonical(name, entries[name])
        raw = name.encode("utf-8")
        if arr.ndim > 255:
            raise FormatError(f"entry '{name}': rank {arr.ndim} too large")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    """Parse a container; any inconsistency raises :class:`FormatError` and returns nothing."""
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"truncated container while reading {what}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad magic: not a DSDN checkpoint")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (expected {VERSION})")
    entries: dict[str, np.ndarray] = {}
    for index in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"name length of entry {index}"))
        try:
            name = bytes(take(nlen, f"name of entry {index}")).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"entry {index}: name is not utf-8") from None
        code, rank = struct.unpack("<BB", take(2, f"header of entry '{name}'"))
        if code not in CODE_DTYPES:
            raise FormatError(f"entry '{name}': unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"dims of entry '{name}'"))
        dtype = CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        payload = take(nbytes, f"payload of entry '{name}'")
        if name in entries:
            raise FormatError(f"duplicate entry '{name}'")
        entries[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after the last entry")
    return entries


def save(entries: dict[str, np.ndarray], path: Union[str, Path]) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    blob = encode(entries)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load(path: Union[str, Path]) -> dict[str, np.ndarray]:
    try:
        blob = Path(path).read_bytes()
    except OSError as err:
        raise FormatError(f"cannot read checkpoint {path}: {err}") from None
    return decode(blob)

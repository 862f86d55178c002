"""Dense float64 tensors and the TSB1 / CKP1 binary formats.

All numeric state in this package lives in C-contiguous float64 numpy
arrays (row-major flat storage). Arrays are treated as immutable values:
operations always return fresh arrays and never write into their inputs.

TSB1 is the on-disk tensor format used for signals, masks, and checkpoint
records: magic ``TSB1``, u32 little-endian rank, rank x u32 little-endian
dims, then product(dims) float64 little-endian values in row-major order.

CKP1 is the checkpoint container: magic ``CKP1``, u32 record count, then
records of (u16 name length, UTF-8 name, embedded TSB1 blob).
"""

from __future__ import annotations

import struct

import numpy as np

TSB1_MAGIC = b"TSB1"
CKP1_MAGIC = b"CKP1"


class TensorFormatError(ValueError):
    """A TSB1/CKP1 payload does not match its declared format."""


def as_tensor(values) -> np.ndarray:
    """Coerce to a C-ordered float64 array (copying only if needed).

    Unlike ``np.ascontiguousarray`` this preserves 0-d inputs as 0-d.
    """
    return np.asarray(values, dtype=np.float64, order="C")


def require_finite(arr: np.ndarray, label: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{label} contains non-finite entries (NaN or Inf)")
    return arr


def require_binary(arr: np.ndarray, label: str = "mask") -> np.ndarray:
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"{label} must contain only 0.0 and 1.0 entries")
    return arr


# ---------------------------------------------------------------------------
# TSB1
# ---------------------------------------------------------------------------


def tsb1_bytes(arr) -> bytes:
    arr = as_tensor(arr)
    header = TSB1_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return header + arr.astype("<f8").tobytes(order="C")


def tsb1_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one TSB1 blob starting at ``offset``; returns (array, next offset)."""
    magic = buf[offset : offset + 4]
    if magic != TSB1_MAGIC:
        raise TensorFormatError(
            f"bad tensor magic at offset {offset}: expected {TSB1_MAGIC!r}, found {bytes(magic)!r}"
        )
    offset += 4
    if len(buf) < offset + 4:
        raise TensorFormatError(f"truncated tensor header at offset {offset}")
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if len(buf) < offset + 4 * rank:
        raise TensorFormatError(f"truncated dim list at offset {offset} (rank {rank})")
    dims = struct.unpack_from(f"<{rank}I", buf, offset) if rank else ()
    offset += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    nbytes = 8 * count
    if len(buf) < offset + nbytes:
        raise TensorFormatError(
            f"truncated tensor payload at offset {offset}: need {nbytes} bytes, have {len(buf) - offset}"
        )
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    offset += nbytes
    return data.astype(np.float64).reshape(dims), offset


def write_tsb1(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(tsb1_bytes(arr))


def read_tsb1(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = tsb1_from_bytes(buf, 0)
    if end != len(buf):
        raise TensorFormatError(f"{len(buf) - end} trailing bytes after tensor payload")
    return arr


# ---------------------------------------------------------------------------
# CKP1
# ---------------------------------------------------------------------------


def write_checkpoint(path, named: dict[str, np.ndarray]) -> None:
    """Write a name -> tensor mapping; records are sorted by name for
    byte-stable output."""
    parts = [CKP1_MAGIC, struct.pack("<I", len(named))]
    for name in sorted(named):
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise TensorFormatError(f"record name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(tsb1_bytes(named[name]))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKP1_MAGIC:
        raise TensorFormatError(
            f"bad checkpoint magic: expected {CKP1_MAGIC!r}, found {bytes(buf[:4])!r}"
        )
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    named: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(buf) < offset + 2:
            raise TensorFormatError(f"truncated record header at offset {offset}")
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + nlen].decode("utf-8")
        offset += nlen
        arr, offset = tsb1_from_bytes(buf, offset)
        if name in named:
            raise TensorFormatError(f"duplicate record name {name!r}")
        named[name] = arr
    if offset != len(buf):
        raise TensorFormatError(f"{len(buf) - offset} trailing bytes after last record")
    return named

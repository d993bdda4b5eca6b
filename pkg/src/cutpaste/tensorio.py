"""Raw tensor files (.cpt).

Layout: magic b"CPCT", version byte 0x01, ndim byte, ndim little-endian
uint32 dims, then row-major little-endian IEEE-754 float32 payload. Round
trips are bit-exact for float32 data.
"""

from __future__ import annotations

import struct

import numpy as np

from .arrays import ValidationError

MAGIC = b"CPCT"
VERSION = 1


class TensorFormatError(ValidationError):
    """Corrupt or out-of-contract .cpt file."""


def write_tensor(data: np.ndarray, path) -> None:
    data = np.asarray(data)
    if data.ndim == 0 or data.ndim > 255:
        raise TensorFormatError(f"ndim must be in 1..255, got {data.ndim}")
    if not np.all(np.isfinite(data)):
        raise TensorFormatError("tensor contains non-finite values")
    for d in data.shape:
        if d >= 1 << 32:
            raise TensorFormatError(f"dimension {d} exceeds uint32")
    payload = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION, data.ndim]))
        fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
        fh.write(payload.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic")
    if raw[4] != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {raw[4]}")
    ndim = raw[5]
    if ndim == 0:
        raise TensorFormatError(f"{path}: zero ndim")
    header_end = 6 + 4 * ndim
    if len(raw) < header_end:
        raise TensorFormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{ndim}I", raw[6:header_end])
    count = int(np.prod(dims, dtype=np.int64))
    expected = header_end + 4 * count
    if len(raw) != expected:
        raise TensorFormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    flat = np.frombuffer(raw[header_end:], dtype="<f4")
    return flat.reshape(dims).copy()

"""Flat binary snapshots of (u, u_dot).

Layout (all offsets in bytes, little-endian as written by this module)::

    0   8  magic       b"KGSNAP01"
    8   4  endian tag  uint32 0x01020304
    12  4  dims        uint32
    16  4  N           uint32 (points per dimension)
    20  4  reserved    uint32, zero
    24  8  L           float64 (box extent)
    32  8  t           float64 (snapshot time)
    40  16*N^dims      u as complex128, C order
    ..  16*N^dims      u_dot as complex128, C order

The reader decodes the tag to detect byte order, so files written on a
big-endian host load as well.
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .grid import FieldState, make_grid

MAGIC = b"KGSNAP01"
ENDIAN_TAG = 0x01020304
HEADER_SIZE = 40


class SnapshotError(ValueError):
    pass


def encode_snapshot(state: FieldState, t: float) -> bytes:
    g = state.grid
    head = MAGIC + struct.pack("<IIII", ENDIAN_TAG, g.dim, g.points_per_dim, 0)
    head += struct.pack("<dd", float(g.extent), float(t))
    u = np.ascontiguousarray(state.u.values, dtype="<c16")
    v = np.ascontiguousarray(state.udot.values, dtype="<c16")
    return head + u.tobytes() + v.tobytes()


def decode_snapshot(buf: bytes) -> tuple[FieldState, float]:
    if len(buf) < HEADER_SIZE or buf[:8] != MAGIC:
        raise SnapshotError("not a snapshot file")
    for order in "<>":
        tag, dims, n, _ = struct.unpack(order + "IIII", buf[8:24])
        if tag == ENDIAN_TAG:
            break
    else:
        raise SnapshotError("unrecognized endianness tag")
    extent, t = struct.unpack(order + "dd", buf[24:40])
    count = n ** dims
    if len(buf) != HEADER_SIZE + 32 * count:
        raise SnapshotError(f"payload size {len(buf) - HEADER_SIZE} does not match {dims}D N={n}")
    dt = np.dtype(order + "c16")
    data = np.frombuffer(buf, dtype=dt, offset=HEADER_SIZE).astype(np.complex128)
    shape = (n,) * dims
    g = make_grid(dims, extent, n)
    return FieldState.from_arrays(g, data[:count].reshape(shape).copy(),
                                  data[count:].reshape(shape).copy()), t


def atomic_write(path, data) -> None:
    """Write via a sibling temp file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_snapshot(path, state: FieldState, t: float) -> None:
    atomic_write(path, encode_snapshot(state, t))


def read_snapshot(path) -> tuple[FieldState, float]:
    with open(path, "rb") as fh:
        return decode_snapshot(fh.read())

"""IOSPC v1: the on-disk container for 6-channel point clouds.

Byte layout (all little-endian, no padding; 59-byte header):

    offset  size  field
    0       6     magic "IOSPC\\0"
    6       2     version, u16 (currently 1)
    8       4     point_count, u32
    12      1     channel_count, u8 (6 for this version)
    13      6     channel tags, one byte each: "XYZGGG"
    19      8     sampling seed, u64
    27      24    normalization centroid, 3 x f64
    51      8     normalization scale, f64
    59      -     payload: point_count rows of 6 x f32 (x y z g1 g2 g3)

A valid file is exactly 59 + 24 * point_count bytes long.
"""

from __future__ import annotations

from dataclasses import dataclass
import io
import logging
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .geometry import Normalization, PointCloud

logger = logging.getLogger(__name__)

MAGIC = b"IOSPC\x00"
VERSION = 1
CHANNEL_COUNT = 6
CHANNEL_TAGS = b"XYZGGG"
HEADER_SIZE = 59
ROW_SIZE = 24  # 6 channels x f32

_HEADER_STRUCT = struct.Struct("<6sHIB6sQ3dd")
assert _HEADER_STRUCT.size == HEADER_SIZE

_GCP_TOL = 1e-6


class PcFormatError(Exception):
    """Base class for IOSPC read/write failures."""


class BadMagic(PcFormatError):
    """The file does not start with the IOSPC magic."""


class UnsupportedVersion(PcFormatError):
    """The header declares a version this reader does not implement."""


class Truncated(PcFormatError):
    """The size law 59 + 24 * point_count is violated (short or long)."""


class InvariantViolation(PcFormatError):
    """Header constants or payload invariants do not hold."""


def file_size(n_points: int) -> int:
    """Exact byte size of an IOSPC v1 file with n_points rows."""
    return HEADER_SIZE + ROW_SIZE * n_points


def write_pointcloud(cloud: PointCloud, sink: BinaryIO) -> int:
    """Serialize a cloud to a binary sink; returns the bytes written.

    I/O errors from the sink propagate unchanged.
    """
    header = _HEADER_STRUCT.pack(
        MAGIC,
        VERSION,
        cloud.n_points,
        CHANNEL_COUNT,
        CHANNEL_TAGS,
        cloud.seed,
        float(cloud.normalization.centroid[0]),
        float(cloud.normalization.centroid[1]),
        float(cloud.normalization.centroid[2]),
        float(cloud.normalization.scale),
    )
    payload = np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if data is None or len(data) != n:
        got = 0 if data is None else len(data)
        raise Truncated(f"expected {n} bytes of {what}, got {got}")
    return data


def read_pointcloud(source: BinaryIO, *, strict: bool = True) -> PointCloud:
    """Parse an IOSPC v1 stream back into a PointCloud.

    Validates the magic, version, header constants, and the size law (the
    stream must end exactly after the payload). Pseudo-color channels
    outside [0 - 1e-6, 1 + 1e-6] raise InvariantViolation when strict is
    True (the default) and are only logged as a warning otherwise.
    """
    header = _read_exact(source, HEADER_SIZE, "header")
    (
        magic,
        version,
        n_points,
        channel_count,
        tags,
        seed,
        cx,
        cy,
        cz,
        scale,
    ) = _HEADER_STRUCT.unpack(header)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} (reader implements {VERSION})")
    if channel_count != CHANNEL_COUNT:
        raise InvariantViolation(
            f"channel_count {channel_count} (version {VERSION} requires {CHANNEL_COUNT})"
        )
    if tags != CHANNEL_TAGS:
        raise InvariantViolation(f"channel tags {tags!r} (expected {CHANNEL_TAGS!r})")

    payload = _read_exact(source, ROW_SIZE * n_points, "payload")
    if source.read(1) != b"":
        raise Truncated("trailing bytes after the payload (size law violated)")
    points = np.frombuffer(payload, dtype="<f4").reshape(n_points, 6).copy()

    g = points[:, 3:]
    if g.size and (g.min() < -_GCP_TOL or g.max() > 1 + _GCP_TOL or not np.isfinite(g).all()):
        msg = "pseudo-color channel outside [0, 1] beyond 1e-6"
        if strict:
            raise InvariantViolation(msg)
        logger.warning("%s (lenient read)", msg)

    return PointCloud(points, Normalization(np.array([cx, cy, cz]), scale), seed)


def write_pointcloud_bytes(cloud: PointCloud) -> bytes:
    buf = io.BytesIO()
    write_pointcloud(cloud, buf)
    return buf.getvalue()


def read_pointcloud_bytes(data: bytes, *, strict: bool = True) -> PointCloud:
    return read_pointcloud(io.BytesIO(data), strict=strict)


def load_pointcloud(path: str | Path, *, strict: bool = True) -> PointCloud:
    with open(path, "rb") as fh:
        return read_pointcloud(fh, strict=strict)


def save_pointcloud(cloud: PointCloud, path: str | Path) -> int:
    with open(path, "wb") as fh:
        return write_pointcloud(cloud, fh)

"""Reader for IOSPC v1 point-cloud files.

Implemented directly from the byte layout: a 59-byte little-endian header
followed by ``count`` rows of six float32 channels (x, y, z, then three
orientation-derived color channels). The header carries the magic
``IOSPC\\0``, a format version, the row count, the channel count and tag
string, the generator seed, and the centroid/scale pair that maps the stored
unit-ball coordinates back to the source frame.

This module deliberately depends on nothing but the byte layout, so it can
consume files from any producer of the format.
"""

from __future__ import annotations

import dataclasses
import logging
import struct
from pathlib import Path

import numpy as np

from .errors import BadHeader, BadMagic, InvalidPayload, Truncated

logger = logging.getLogger(__name__)

MAGIC = b"IOSPC\x00"
VERSION = 1
CHANNELS = 6
CHANNEL_TAGS = b"XYZGGG"
_HEADER = struct.Struct("<6sHIB6sQ3dd")
HEADER_SIZE = _HEADER.size
ROW_SIZE = 24
COLOR_SLACK = 1e-6


@dataclasses.dataclass(frozen=True)
class CloudFile:
    """One decoded cloud: float32 rows plus the header metadata."""

    points: np.ndarray
    seed: int
    centroid: np.ndarray
    scale: float


def read_iospc_bytes(data: bytes) -> CloudFile:
    """Decode one cloud from an in-memory byte string.

    The stream must hold exactly one cloud: trailing bytes after the declared
    payload are treated the same way as missing ones.
    """
    if len(data) < HEADER_SIZE:
        raise Truncated(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    magic, version, count, channels, tags, seed, cx, cy, cz, scale = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadHeader(f"unsupported version {version}")
    if channels != CHANNELS or tags != CHANNEL_TAGS:
        raise BadHeader(f"unexpected channel layout {channels} {tags!r}")
    expected = HEADER_SIZE + ROW_SIZE * count
    if len(data) != expected:
        raise Truncated(f"expected {expected} bytes for {count} rows, have {len(data)}")
    raw = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE)
    points = raw.reshape(count, CHANNELS).astype(np.float32)
    if count:
        if not np.isfinite(points).all():
            raise InvalidPayload("non-finite channel value")
        color = points[:, 3:]
        if color.min() < -COLOR_SLACK or color.max() > 1.0 + COLOR_SLACK:
            logger.warning("color channel outside [0, 1] by more than %g", COLOR_SLACK)
    centroid = np.array([cx, cy, cz], dtype=np.float64)
    return CloudFile(points=points, seed=int(seed), centroid=centroid, scale=float(scale))


def read_iospc(path: str | Path) -> CloudFile:
    return read_iospc_bytes(Path(path).read_bytes())

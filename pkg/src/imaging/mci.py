from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from app_helpers.utils import atomic_write_bytes
from geometry.errors import FormatError
from imaging.channels import CHANNELS, ChannelImage

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"MCI1"
# magic, width, height, channels, mask flag, 3 pad bytes
HEADER = struct.Struct("<4sIIIB3x")


# -----------------------------
# MCI
# -----------------------------
def encode_mci(image: ChannelImage) -> bytes:
    header = HEADER.pack(MAGIC, image.width, image.height, image.channels, 1)
    return b"".join(
        [
            header,
            image.data.astype("<f4").tobytes(order="C"),
            image.mask.astype(np.uint8).tobytes(order="C"),
            image.normalization.astype("<f4").tobytes(order="C"),
        ]
    )


def decode_mci(data: bytes) -> ChannelImage:
    if len(data) < HEADER.size:
        raise FormatError(f"file is {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, width, height, channels, has_mask = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if channels != len(CHANNELS):
        raise FormatError(f"expected {len(CHANNELS)} channels, header says {channels}")
    if has_mask not in (0, 1):
        raise FormatError(f"mask flag must be 0 or 1, got {has_mask}")
    n = width * height
    sizes = [channels * n * 4, n if has_mask else 0, channels * 2 * 4]
    expected = HEADER.size + sum(sizes)
    if len(data) != expected:
        raise FormatError(f"file is {len(data)} bytes, header implies {expected}")

    pos = HEADER.size
    planes = np.frombuffer(data, dtype="<f4", count=channels * n, offset=pos).reshape(channels, height, width)
    pos += sizes[0]
    if has_mask:
        raw = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos)
        if np.any(raw > 1):
            raise FormatError("mask bytes must be 0 or 1")
        mask = raw.reshape(height, width).astype(bool)
    else:
        mask = np.ones((height, width), dtype=bool)
    pos += sizes[1]
    norm = np.frombuffer(data, dtype="<f4", count=channels * 2, offset=pos).reshape(channels, 2)
    try:
        return ChannelImage(planes.astype(np.float32), mask, norm.astype(np.float32))
    except ValueError as exc:
        raise FormatError(f"inconsistent image payload: {exc}") from None


def write_mci(image: ChannelImage, path: PathLike) -> Path:
    out = atomic_write_bytes(Path(path), encode_mci(image))
    logger.debug("Wrote %s (%dx%dx%d)", out, image.width, image.height, image.channels)
    return out


def read_mci(path: PathLike) -> ChannelImage:
    return decode_mci(Path(path).read_bytes())


# -----------------------------
# Netpbm previews
# -----------------------------
def _to_bytes(plane: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(plane), 0, 255).astype(np.uint8)


def export_channel_pgm(image: ChannelImage, channel: Union[int, str], path: PathLike) -> Path:
    """8-bit P5 of one normalised channel, by index or by name."""
    index = CHANNELS.index(channel) if isinstance(channel, str) else int(channel)
    if not 0 <= index < image.channels:
        raise IndexError(f"channel {channel} out of range [0, {image.channels})")
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return atomic_write_bytes(Path(path), header + _to_bytes(image.data[index]).tobytes())


def export_color_ppm(image: ChannelImage, path: PathLike) -> Path:
    """P6 composite of the R, G and B channels."""
    rgb = np.stack([image.data[CHANNELS.index(c)] for c in ("R", "G", "B")], axis=-1)
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return atomic_write_bytes(Path(path), header + _to_bytes(rgb).tobytes())

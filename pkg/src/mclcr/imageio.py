"""Binary PNM (P5/P6, maxval 255) images and luminance conversion."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PNMError(ValueError):
    """Malformed, truncated or unsupported PNM data."""


@dataclass(eq=False)
class Image:
    """8-bit raster image; ``pixels`` has shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"image pixels must be HxWx1 or HxWx3, got {px.shape}")
        if px.dtype != np.uint8:
            if px.min(initial=0) < 0 or px.max(initial=0) > 255:
                raise ValueError("pixel values outside [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def to_float(self) -> np.ndarray:
        """Pixels scaled to [0, 1] as float64."""
        return self.pixels.astype(np.float64) / 255.0


def encode_pnm(image: Image) -> bytes:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    return header + np.ascontiguousarray(image.pixels).tobytes()


def decode_pnm(buf: bytes) -> Image:
    if buf[:2] not in (b"P5", b"P6"):
        raise PNMError(f"unsupported PNM format {buf[:2]!r}; only binary P5/P6 are read")
    channels = 1 if buf[:2] == b"P5" else 3
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PNMError("malformed PNM header: ended before width/height/maxval")
        fields.append(buf[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise PNMError(f"malformed PNM header fields {fields!r}") from exc
    if width <= 0 or height <= 0:
        raise PNMError(f"malformed PNM header: non-positive extents {width}x{height}")
    if maxval != 255:
        raise PNMError(f"unsupported maxval {maxval}; only 255 is supported")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise PNMError(f"truncated PNM payload: expected {need} bytes, got {len(payload)}")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()
    return Image(px)


def write_pnm(image: Image, path) -> None:
    Path(path).write_bytes(encode_pnm(image))


def read_pnm(path) -> Image:
    return decode_pnm(Path(path).read_bytes())


LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(image: Image) -> Image:
    """BT.601 luminance rounded half-up; single-channel input is returned unchanged."""
    if image.channels == 1:
        return image
    y = image.pixels.astype(np.float64) @ LUMA
    return Image(np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8))

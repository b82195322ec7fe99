"""Grayscale rasters: PGM I/O, bicubic resampling and window extraction."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class PgmError(ValueError):
    pass


class PatchBoundsError(IndexError):
    """The requested window leaves the image; callers are expected to clamp."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major intensities in [0, 1], stored as a (height, width) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2-D raster, got shape {px.shape}")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ValueError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass(frozen=True)
class PatchSpec:
    center_x: float
    center_y: float
    size: int

    @classmethod
    def at(cls, left: int, top: int, size: int) -> "PatchSpec":
        half = (size - 1) / 2
        return cls(left + half, top + half, size)

    @property
    def top_left(self) -> tuple[int, int]:
        half = (self.size - 1) / 2
        left, top = self.center_x - half, self.center_y - half
        if left != int(left) or top != int(top):
            raise ValueError(f"center ({self.center_x}, {self.center_y}) is off the window grid "
                             f"for size {self.size}")
        return int(left), int(top)


# -- PGM ------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PgmError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise PgmError("truncated PGM header")
    return tokens, pos + 1


def decode_pgm(data: bytes) -> GrayImage:
    if data[:2] != b"P5":
        raise PgmError(f"not a binary PGM (magic {data[:2]!r})")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PgmError("malformed PGM header") from None
    if maxval != 255:
        raise PgmError(f"unsupported maxval {maxval}; only 255 is handled")
    if width < 1 or height < 1:
        raise PgmError("PGM dimensions must be positive")
    payload = data[offset:offset + width * height]
    if len(payload) < width * height:
        raise PgmError(f"truncated PGM payload: {len(payload)} of {width * height} bytes")
    raster = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(raster / 255.0)


def encode_pgm(image: GrayImage) -> bytes:
    raster = np.floor(image.pixels * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + raster.tobytes()


def load_pgm(source) -> GrayImage:
    if hasattr(source, "read"):
        return decode_pgm(source.read())
    with open(source, "rb") as fh:
        return decode_pgm(fh.read())


def save_pgm(image: GrayImage, destination) -> None:
    data = encode_pgm(image)
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        with open(destination, "wb") as fh:
            fh.write(data)


# -- bicubic resampling ----------------------------------------------------

def cubic_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel; ``a=-0.5`` is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _resample_matrix(n_in: int, n_out: int, scale: float) -> np.ndarray:
    """Rows map input samples to one output sample along an axis.

    Pixel centers are aligned (``src = (dst + 0.5) / scale - 0.5``). When
    shrinking, the kernel is stretched by ``1/scale`` so it also low-passes.
    Taps outside the input are folded onto the nearest edge pixel.
    """
    stretch = 1.0 / scale if scale < 1 else 1.0
    support = 2.0 * stretch
    M = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = (o + 0.5) / scale - 0.5
        lo = math.floor(src - support) + 1
        hi = math.ceil(src + support) - 1
        taps = np.arange(lo, hi + 1)
        w = cubic_kernel((src - taps) / stretch)
        w = w / w.sum()
        np.add.at(M[o], np.clip(taps, 0, n_in - 1), w)
    return M


def _output_side(n: int, factor: Fraction) -> int:
    return max(1, int(math.floor(n * factor + Fraction(1, 2))))


def resize_array(pixels: np.ndarray, factor) -> np.ndarray:
    """Bicubic resize of an arbitrary real 2-D array, no clamping."""
    factor = Fraction(factor).limit_denominator(10_000)
    if factor <= 0:
        raise ValueError(f"resize factor must be positive, got {factor}")
    h, w = pixels.shape
    if factor == 1:
        return np.array(pixels, dtype=np.float64)
    oh, ow = _output_side(h, factor), _output_side(w, factor)
    # Scale per axis so the output grid spans the input exactly.
    My = _resample_matrix(h, oh, oh / h)
    Mx = _resample_matrix(w, ow, ow / w)
    return My @ pixels @ Mx.T


def bicubic_resize(image: GrayImage, factor) -> GrayImage:
    """Resize by a positive rational factor, e.g. ``Fraction(1, 4)``."""
    out = resize_array(image.pixels, factor)
    return GrayImage(np.clip(out, 0.0, 1.0))


# -- windows ----------------------------------------------------------------

def extract_patch(image: GrayImage, spec: PatchSpec) -> np.ndarray:
    """Copy of the ``size x size`` window described by ``spec`` (2-D)."""
    left, top = spec.top_left
    s = spec.size
    if left < 0 or top < 0 or left + s > image.width or top + s > image.height:
        raise PatchBoundsError(
            f"window {s}x{s} at ({left}, {top}) leaves the {image.width}x{image.height} image")
    return image.pixels[top:top + s, left:left + s].copy()


def extract_window(image: GrayImage, left: int, top: int, size: int) -> np.ndarray:
    return extract_patch(image, PatchSpec.at(left, top, size))

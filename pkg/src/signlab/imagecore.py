"""Raster images, binary PNM I/O and bilinear resampling.

Images are immutable ``uint8`` arrays of shape ``(height, width, 3)``.
Masks are ``(height, width)`` arrays where 255 marks the person and 0 the
background.  Coordinates are in pixel-index space: the integer point
``(i, j)`` is the centre of column ``i``, row ``j``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigError, IoFailure, SignLabError

PathLike = Union[str, os.PathLike]


class PNMError(SignLabError):
    """Base class for PNM decoding failures."""


class MissingFile(PNMError, ConfigError):
    pass


class BadMagic(PNMError):
    pass


class UnsupportedMaxval(PNMError):
    pass


class TruncatedData(PNMError):
    pass


class ZeroDimension(ConfigError):
    pass


class BoxOutOfBounds(ConfigError):
    pass


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def quantize(values: np.ndarray) -> np.ndarray:
    """Float samples to clamped ``uint8`` with half-away-from-zero rounding."""
    return np.clip(round_half_away(values), 0, 255).astype(np.uint8)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    arr.flags.writeable = False
    return arr


class Image:
    """An RGB raster with 8-bit channels."""

    __slots__ = ("pixels",)
    channels = 3

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ZeroDimension("image dimensions must be >= 1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("samples must lie in [0, 255]")
        if arr.flags.writeable or arr.dtype != np.uint8:
            arr = _frozen(arr.copy())
        self.pixels = arr

    @classmethod
    def filled(cls, width: int, height: int, rgb=(0, 0, 0)) -> "Image":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[...] = np.asarray(rgb, dtype=np.uint8)
        return cls(arr)

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "Image":
        if len(data) != width * height * 3:
            raise ValueError("data length must equal width*height*3")
        return cls(np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


class Mask:
    """Per-pixel person coverage; ``alpha = sample / 255``."""

    __slots__ = ("alpha8",)

    def __init__(self, alpha8):
        arr = np.asarray(alpha8)
        if arr.ndim != 2:
            raise ValueError(f"expected (H, W) array, got shape {arr.shape}")
        if arr.dtype != np.uint8 or arr.flags.writeable:
            arr = _frozen(arr.copy())
        self.alpha8 = arr

    @property
    def width(self) -> int:
        return self.alpha8.shape[1]

    @property
    def height(self) -> int:
        return self.alpha8.shape[0]

    @property
    def alpha(self) -> np.ndarray:
        return self.alpha8.astype(np.float64) / 255.0

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return bool(np.array_equal(self.alpha8, other.alpha8))

    def __repr__(self):
        return f"Mask({self.width}x{self.height})"


@dataclass(frozen=True)
class Box:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def is_valid_for(self, width: int, height: int) -> bool:
        return 0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height

    def offset(self, dx: int, dy: int) -> "Box":
        return Box(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class FillMode:
    """Out-of-bounds policy for sampling: a constant colour or edge clamping."""

    kind: str = "constant"
    value: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def constant(cls, c=0) -> "FillMode":
        if np.isscalar(c):
            c = (c, c, c)
        return cls("constant", tuple(float(v) for v in c))

    @classmethod
    def clamp(cls) -> "FillMode":
        return cls("clamp")


BLACK = FillMode.constant(0)


# PNM reading -------------------------------------------------------------


def _read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise MissingFile(f"no such file: {path}") from None
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _parse_header(buf: bytes, n_fields: int) -> tuple[list[bytes], int]:
    """Split a PNM header into whitespace-separated tokens, skipping comments.

    Returns the tokens and the offset of the first payload byte, which
    follows exactly one whitespace character after the last token.
    """
    tokens: list[bytes] = []
    pos, n = 0, len(buf)
    while len(tokens) < n_fields:
        while pos < n and (buf[pos] in b" \t\r\n\x0b\x0c" or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in b" \t\r\n\x0b\x0c#":
            pos += 1
        if start == pos:
            raise TruncatedData("header ended early")
        tokens.append(buf[start:pos])
    if pos >= n or buf[pos] not in b" \t\r\n\x0b\x0c":
        raise TruncatedData("missing whitespace before payload")
    return tokens, pos + 1


def _decode_pnm(buf: bytes, magic: bytes, channels: int, path) -> np.ndarray:
    if buf[:2] != magic:
        raise BadMagic(f"{path}: expected {magic.decode()} magic, got {buf[:2]!r}")
    tokens, offset = _parse_header(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise BadMagic(f"{path}: malformed header") from None
    if width < 1 or height < 1:
        raise ZeroDimension(f"{path}: zero image dimension")
    if maxval != 255:
        raise UnsupportedMaxval(f"{path}: maxval {maxval} is not supported")
    need = width * height * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise TruncatedData(f"{path}: expected {need} payload bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return arr.reshape(shape)


def read_pnm_size(path: PathLike) -> tuple[int, int]:
    """(width, height) from a P5/P6 header without decoding the payload."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(4096)
    except FileNotFoundError:
        raise MissingFile(f"no such file: {path}") from None
    if head[:2] not in (b"P5", b"P6"):
        raise BadMagic(f"{path}: not a binary PNM file")
    tokens, _ = _parse_header(head, 4)
    return int(tokens[1]), int(tokens[2])


def load_ppm(path: PathLike) -> Image:
    """Decode a binary ``P6`` file with maxval 255."""
    return Image(_decode_pnm(_read_bytes(path), b"P6", 3, path))


def load_pgm(path: PathLike) -> Mask:
    """Decode a binary ``P5`` file with maxval 255 into a :class:`Mask`."""
    return Mask(_decode_pnm(_read_bytes(path), b"P5", 1, path))


def encode_ppm(img: Image) -> bytes:
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return b"P5\n%d %d\n255\n" % (w, h) + gray.tobytes()


def _write(path: PathLike, blob: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def save_ppm(img: Image, path: PathLike) -> None:
    _write(path, encode_ppm(img))


def save_pgm(gray, path: PathLike) -> None:
    """Write a single-channel 8-bit array (or a :class:`Mask`) as ``P5``."""
    if isinstance(gray, Mask):
        gray = gray.alpha8
    _write(path, encode_pgm(gray))


# Resampling ----------------------------------------------------------------


def bilinear_map(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                 fill: FillMode = BLACK) -> np.ndarray:
    """Vectorised bilinear sampling of ``pixels`` at float coords.

    ``pixels`` is ``(H, W, C)``; ``xs`` and ``ys`` share any shape S and the
    result has shape ``S + (C,)`` in float64.
    """
    src = np.asarray(pixels, dtype=np.float64)
    h, w = src.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if fill.kind == "clamp":
        xs = np.clip(xs, 0.0, w - 1)
        ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    fill_value = np.asarray(fill.value if fill.kind == "constant" else (0.0,) * 3)
    fill_value = fill_value[: src.shape[2]]

    def tap(xi, yi):
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside[..., None], vals, fill_value)

    out = (1 - fx) * (1 - fy) * tap(x0, y0)
    # skip taps whose weight is exactly zero so integer coordinates at the
    # far edge never read the fill value.
    for dx, dy, wgt in ((1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        if np.any(wgt):
            out = out + wgt * tap(x0 + dx, y0 + dy)
    return out


def sample_bilinear(img: Image, x: float, y: float, fill: FillMode = BLACK) -> tuple[float, float, float]:
    """Bilinear RGB value at continuous pixel coordinate ``(x, y)``."""
    v = bilinear_map(img.pixels, np.array(x), np.array(y), fill)
    return tuple(float(c) for c in v)


def _resize_coords(src_size: int, dst_size: int) -> np.ndarray:
    scale = src_size / dst_size
    coords = (np.arange(dst_size) + 0.5) * scale - 0.5
    return np.clip(coords, 0.0, src_size - 1)


def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    if out_w < 1 or out_h < 1:
        raise ZeroDimension(f"cannot resize to {out_w}x{out_h}")
    if (out_w, out_h) == img.size:
        return img
    xs = _resize_coords(img.width, out_w)
    ys = _resize_coords(img.height, out_h)
    gx, gy = np.meshgrid(xs, ys)
    return Image(quantize(bilinear_map(img.pixels, gx, gy, FillMode.clamp())))


def resize_mask(mask: Mask, out_w: int, out_h: int) -> Mask:
    if (out_w, out_h) == (mask.width, mask.height):
        return mask
    gx, gy = np.meshgrid(_resize_coords(mask.width, out_w), _resize_coords(mask.height, out_h))
    vals = bilinear_map(mask.alpha8[..., None], gx, gy, FillMode.clamp())[..., 0]
    return Mask(quantize(vals))


def crop(img: Image, box: Box) -> Image:
    if not box.is_valid_for(img.width, img.height):
        raise BoxOutOfBounds(f"{box} outside {img.width}x{img.height} image")
    return Image(img.pixels[box.y0:box.y1, box.x0:box.x1])

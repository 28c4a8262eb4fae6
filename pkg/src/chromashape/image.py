"""Planar image types, RGB/YUV conversion, the all-channel L2 metric and PNG I/O.

Images are stored as float64 arrays of shape ``(3, height, width)``.  The YUV
variant is the offset-free analog BT.601 form, so the same matrix converts
both images and noise (differences of images).
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, MalformedPngError, PngNotFoundError, ShapeMismatchError, UnsupportedPngError

RGB = "RGB"
YUV = "YUV"

# Rows: Y, U, V.  U = 0.492 (B - Y), V = 0.877 (R - Y).
RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.492 * 0.299, -0.492 * 0.587, 0.492 * (1.0 - 0.114)],
        [0.877 * (1.0 - 0.299), -0.877 * 0.587, -0.877 * 0.114],
    ]
)
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)

U_MAX = 0.492 * (1.0 - 0.114)
V_MAX = 0.877 * (1.0 - 0.299)


def _as_planes(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ShapeMismatchError(f"expected planes of shape (3, H, W), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class _Planar:
    data: np.ndarray

    def __post_init__(self):
        arr = _as_planes(self.data)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True, eq=False)
class RgbImage(_Planar):
    """RGB planes ``(3, H, W)``.

    Values are expected in ``[0, 1]``, but the constructor does not enforce
    it: :func:`yuv_to_rgb` deliberately returns out-of-gamut values so callers
    can inspect them before :func:`clip_unit`.
    """

    @property
    def r(self) -> np.ndarray:
        return self.data[0]

    @property
    def g(self) -> np.ndarray:
        return self.data[1]

    @property
    def b(self) -> np.ndarray:
        return self.data[2]

    def in_gamut(self, tol: float = 0.0) -> bool:
        return bool(self.data.min() >= -tol and self.data.max() <= 1.0 + tol)


@dataclass(frozen=True, eq=False)
class YuvImage(_Planar):
    @property
    def y(self) -> np.ndarray:
        return self.data[0]

    @property
    def u(self) -> np.ndarray:
        return self.data[1]

    @property
    def v(self) -> np.ndarray:
        return self.data[2]


@dataclass(frozen=True, eq=False)
class NoiseField(_Planar):
    """Signed perturbation planes tagged with their colour domain."""

    domain: str = RGB

    def __post_init__(self):
        super().__post_init__()
        if self.domain not in (RGB, YUV):
            raise DomainError(f"unknown noise domain {self.domain!r}")

    @property
    def c0(self) -> np.ndarray:
        return self.data[0]

    @property
    def c1(self) -> np.ndarray:
        return self.data[1]

    @property
    def c2(self) -> np.ndarray:
        return self.data[2]

    @classmethod
    def zeros(cls, height: int, width: int, domain: str = RGB) -> "NoiseField":
        return cls(np.zeros((3, height, width)), domain)

    @classmethod
    def between(cls, adversarial: RgbImage, original: RgbImage) -> "NoiseField":
        _check_same_shape(adversarial, original)
        return cls(adversarial.data - original.data, RGB)


def _check_same_shape(a: _Planar, b: _Planar) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


def _transform(matrix: np.ndarray, planes: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jhw->ihw", matrix, planes)


def rgb_to_yuv(img: RgbImage) -> YuvImage:
    return YuvImage(_transform(RGB_TO_YUV, img.data))


def yuv_to_rgb(img: YuvImage) -> RgbImage:
    """Exact inverse of :func:`rgb_to_yuv`; output is not clipped."""
    return RgbImage(_transform(YUV_TO_RGB, img.data))


def noise_rgb_to_yuv(noise: NoiseField) -> NoiseField:
    if noise.domain != RGB:
        raise DomainError(f"expected RGB noise, got {noise.domain}")
    return NoiseField(_transform(RGB_TO_YUV, noise.data), YUV)


def noise_yuv_to_rgb(noise: NoiseField) -> NoiseField:
    if noise.domain != YUV:
        raise DomainError(f"expected YUV noise, got {noise.domain}")
    return NoiseField(_transform(YUV_TO_RGB, noise.data), RGB)


def l2_distance(a: RgbImage, b: RgbImage) -> float:
    """Euclidean distance over every pixel of all three RGB channels."""
    _check_same_shape(a, b)
    diff = a.data - b.data
    return float(np.sqrt(np.sum(diff * diff)))


def clip_unit(img) -> RgbImage:
    data = img.data if isinstance(img, _Planar) else img
    return RgbImage(np.clip(_as_planes(data), 0.0, 1.0))


def add_noise(img: RgbImage, noise: NoiseField) -> RgbImage:
    """Plain RGB addition, unclipped."""
    if noise.domain != RGB:
        raise DomainError(f"expected RGB noise, got {noise.domain}")
    _check_same_shape(img, noise)
    return RgbImage(img.data + noise.data)


# --- PNG -------------------------------------------------------------------

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _check_chunks(raw: bytes, path) -> None:
    pos, first = len(_PNG_SIGNATURE), True
    while pos + 12 <= len(raw):
        (length,) = struct.unpack_from(">I", raw, pos)
        tag = raw[pos + 4 : pos + 8]
        end = pos + 12 + length
        if end > len(raw):
            break
        (crc,) = struct.unpack_from(">I", raw, end - 4)
        if zlib.crc32(raw[pos + 4 : end - 4]) != crc:
            raise MalformedPngError(f"{path}: CRC mismatch in {tag!r} chunk")
        if first and tag != b"IHDR":
            raise MalformedPngError(f"{path}: first chunk is {tag!r}, not IHDR")
        first = False
        if tag == b"IEND":
            return
        pos = end
    raise MalformedPngError(f"{path}: truncated PNG (no IEND chunk)")


def load_png(path) -> RgbImage:
    """Read an 8-bit PNG as RGB in ``[0, 1]``.

    RGBA drops alpha; greyscale (with or without alpha) and palette images are
    promoted to RGB.  16-bit and 1/2/4-bit images are rejected.
    """
    from PIL import Image, UnidentifiedImageError

    path = Path(path)
    if not path.is_file():
        raise PngNotFoundError(f"no such PNG file: {path}")
    raw = path.read_bytes()
    if not raw.startswith(_PNG_SIGNATURE) or len(raw) < 33:
        raise MalformedPngError(f"not a PNG file: {path}")
    _check_chunks(raw, path)
    bit_depth, colour_type = raw[24], raw[25]
    if bit_depth != 8 and colour_type != 3:
        raise UnsupportedPngError(f"{path}: bit depth {bit_depth} is not supported (8-bit only)")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "RGBA", "L", "LA", "P", "PA"):
                raise UnsupportedPngError(f"{path}: unsupported PNG mode {im.mode}")
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except UnsupportedPngError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise MalformedPngError(f"{path}: {exc}") from exc
    return RgbImage(np.transpose(rgb, (2, 0, 1)) / 255.0)


def to_uint8(img: RgbImage) -> np.ndarray:
    """Quantize to ``(H, W, 3)`` bytes, rounding to the nearest 1/255."""
    return np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def save_png(img: RgbImage, path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(Path(path), format="PNG")


def quantize(img: RgbImage) -> RgbImage:
    """What :func:`save_png` followed by :func:`load_png` would return."""
    return RgbImage(to_uint8(img).transpose(2, 0, 1) / 255.0)

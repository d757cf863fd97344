"""Raster containers, bilinear sampling, gradients and Gaussian pyramids.

All intensities live in [0, 1]. Energy computations work on luminance
(Rec. 601 weights); colour is only carried through to rendering and blending.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class RasterImage:
    """Immutable pixel grid of shape (height, width) or (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        src = self.data.data if isinstance(self.data, RasterImage) else self.data
        arr = np.array(src, dtype=np.float64, copy=True)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ValueError(f"expected (H, W) or (H, W, 3) samples, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("empty image")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image samples must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image samples must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def luminance(self) -> "RasterImage":
        if self.channels == 1:
            return self
        return RasterImage(np.clip(self.data @ LUMA_WEIGHTS, 0.0, 1.0))

    def luma_array(self) -> np.ndarray:
        return self.luminance().data


@dataclass(frozen=True)
class GradientImage:
    """Gradient magnitude of a luminance image (values >= 0, may exceed 1)."""

    magnitude: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitude.shape


@dataclass(frozen=True)
class Pyramid:
    levels: list = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i) -> RasterImage:
        return self.levels[i]


def as_luma(img) -> np.ndarray:
    """Return a float luminance array from a RasterImage or ndarray."""
    if isinstance(img, RasterImage):
        return img.luma_array()
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        return arr @ LUMA_WEIGHTS
    return arr


def load_image(path) -> RasterImage:
    """Read an 8-bit PNG/JPEG; values map to [0, 1] by v / 255."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return RasterImage(arr / 255.0)


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img, path) -> None:
    data = img.data if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)
    if data.dtype == bool:
        data = data.astype(np.float64)
    Image.fromarray(to_uint8(data)).save(path)


def bilinear_arrays(arr: np.ndarray, xs, ys):
    """Vectorised bilinear sampling.

    Returns ``(values, inside)``. A sample is inside when its full 2x2 support
    lies in the image, i.e. ``0 <= x <= W-1`` and ``0 <= y <= H-1``; values for
    outside samples are 0.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = arr.shape[:2]
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bottom = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    vals = top * (1.0 - fy) + bottom * fy
    if arr.ndim == 3:
        vals = np.where(inside[..., None], vals, 0.0)
    else:
        vals = np.where(inside, vals, 0.0)
    return vals, inside


def support_valid(mask: np.ndarray, xs, ys) -> np.ndarray:
    """True where the 2x2 bilinear support of (x, y) is inside ``mask``."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = mask.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ok = mask[y0, x0] & mask[y0, x1] & mask[y1, x0] & mask[y1, x1]
    return inside & ok


def sample_bilinear(img: RasterImage, x: float, y: float):
    """Bilinear sample of ``img`` at subpixel (x, y).

    Returns a float for single-channel images, a length-3 array for colour
    images, or ``None`` when the 2x2 support is not fully inside the image.
    """
    vals, inside = bilinear_arrays(img.data, np.array([x]), np.array([y]))
    if not inside[0]:
        return None
    return float(vals[0]) if img.channels == 1 else vals[0].copy()


def gradient_components(lum: np.ndarray):
    """Central differences inside, one-sided at the borders."""
    if lum.shape[0] < 2 or lum.shape[1] < 2:
        return np.zeros_like(lum), np.zeros_like(lum)
    gy, gx = np.gradient(lum)
    return gx, gy


def gradient_magnitude(img) -> GradientImage:
    lum = as_luma(img)
    gx, gy = gradient_components(lum)
    mag = np.hypot(gx, gy)
    mag.setflags(write=False)
    return GradientImage(mag)


def blur_binomial(arr: np.ndarray) -> np.ndarray:
    out = ndimage.convolve1d(arr, BINOMIAL_5, axis=0, mode="reflect")
    return ndimage.convolve1d(out, BINOMIAL_5, axis=1, mode="reflect")


def downsample(arr: np.ndarray) -> np.ndarray:
    """Binomial blur then keep every second row and column."""
    return blur_binomial(np.asarray(arr, dtype=np.float64))[::2, ::2]


def downsample_mask(mask: np.ndarray) -> np.ndarray:
    """Conservative mask decimation: keep pixels whose blur support is all valid."""
    m = ndimage.minimum_filter(mask.astype(np.uint8), size=5, mode="constant", cval=0)
    return m[::2, ::2].astype(bool)


def clamp_levels(shape, levels: int, min_size: int = 1) -> int:
    h, w = shape[:2]
    n = 1
    while n < levels:
        if math.ceil(h / 2 ** n) < min_size or math.ceil(w / 2 ** n) < min_size:
            break
        n += 1
    return n


def build_pyramid(img: RasterImage, levels: int, min_size: int = 1) -> Pyramid:
    """Gaussian pyramid with the 5-tap binomial kernel, level 0 = full size.

    ``levels`` is clamped so that the coarsest level keeps both dimensions
    >= ``min_size``.
    """
    if not isinstance(img, RasterImage):
        img = RasterImage(img)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    n = clamp_levels(img.shape, levels, min_size)
    out = [img]
    cur = img.data
    for _ in range(1, n):
        if cur.ndim == 3:
            cur = np.stack([downsample(cur[:, :, c]) for c in range(3)], axis=2)
        else:
            cur = downsample(cur)
        out.append(RasterImage(np.clip(cur, 0.0, 1.0)))
    return Pyramid(out)

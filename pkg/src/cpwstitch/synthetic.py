"""Synthetic image pairs with known geometry, for tests and demos."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .geometry import apply_h
from .imaging import RasterImage, bilinear_arrays


def texture(height: int, width: int, seed: int = 0, color: bool = False, edges: int = 12) -> np.ndarray:
    """Band-limited noise with a few straight-edged blocks, values in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    fine = ndimage.gaussian_filter(rng.normal(size=(height, width)), 1.5)
    coarse = ndimage.gaussian_filter(rng.normal(size=(height, width)), 6.0)
    img = fine / fine.std() + 2.0 * coarse / coarse.std()
    img = (img - img.min()) / (img.max() - img.min())
    for _ in range(edges):
        x0, y0 = rng.integers(0, width - 20), rng.integers(0, height - 20)
        w, h = rng.integers(20, max(21, width // 4)), rng.integers(20, max(21, height // 4))
        img[y0:y0 + h, x0:x0 + w] = 0.5 * img[y0:y0 + h, x0:x0 + w] + 0.5 * rng.choice([0.1, 0.9])
    img = ndimage.gaussian_filter(img, 0.7)
    img = 0.05 + 0.9 * (img - img.min()) / (img.max() - img.min())
    if color:
        tint = rng.uniform(0.7, 1.0, size=3)
        img = np.clip(img[:, :, None] * tint[None, None, :], 0.0, 1.0)
    return img


def checkerboard(height: int, width: int, square: int = 16, noise: float = 0.05, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    board = ((xs // square + ys // square) % 2).astype(np.float64)
    img = 0.2 + 0.6 * board + noise * rng.normal(size=(height, width))
    return np.clip(ndimage.gaussian_filter(img, 0.6), 0.0, 1.0)


def render(base: np.ndarray, mapping, height: int, width: int) -> np.ndarray:
    """Image whose pixel (x, y) shows ``base`` at ``mapping((x, y))``."""
    ys, xs = np.mgrid[0:height, 0:width]
    q = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    src = mapping(q)
    vals, inside = bilinear_arrays(base, src[:, 0], src[:, 1])
    if not inside.all():
        raise ValueError("mapping leaves the base texture; enlarge the margin")
    return np.clip(vals.reshape((height, width) + base.shape[2:]), 0.0, 1.0)


def random_homography(rng, width: int, height: int, shift: float = 0.3, rotation: float = 3.0,
                      zoom: float = 0.05, perspective: float = 5e-5) -> np.ndarray:
    """Moderate homography moving content left by about ``shift`` * width."""
    a = math.radians(rng.uniform(-rotation, rotation))
    s = 1.0 + rng.uniform(-zoom, zoom)
    cx, cy = width / 2, height / 2
    rot = np.array([[s * math.cos(a), -s * math.sin(a), 0], [s * math.sin(a), s * math.cos(a), 0], [0, 0, 1.0]])
    t_c = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    t_back = np.array([[1, 0, cx - shift * width + rng.uniform(-5, 5)], [0, 1, cy + rng.uniform(-8, 8)], [0, 0, 1.0]])
    persp = np.eye(3)
    persp[2, :2] = rng.uniform(-perspective, perspective, size=2)
    return t_back @ rot @ t_c @ persp


def displacement_field(rng, width: int, height: int, max_disp: float = 8.0, bumps: int = 4):
    """Smooth field of Gaussian bumps; returns a callable (N, 2) -> (N, 2) with max norm ``max_disp``."""
    centers = np.column_stack([rng.uniform(0, width, bumps), rng.uniform(0, height, bumps)])
    sigmas = rng.uniform(0.15, 0.3, bumps) * min(width, height)
    vecs = rng.normal(size=(bumps, 2))

    def raw(q):
        d2 = ((q[:, None, :] - centers[None]) ** 2).sum(-1)
        g = np.exp(-0.5 * d2 / sigmas[None] ** 2)
        return g @ vecs

    ys, xs = np.mgrid[0:height:4, 0:width:4]
    peak = np.linalg.norm(raw(np.column_stack([xs.ravel(), ys.ravel()]).astype(float)), axis=1).max()
    scale = max_disp / peak

    def field(q):
        return scale * raw(np.asarray(q, dtype=np.float64).reshape(-1, 2))

    return field


def homography_pair(seed: int = 0, width: int = 320, height: int = 240, color: bool = False, **kwargs):
    """``(img1, img2, H)`` with img2(H p) = img1(p) on the common content."""
    return parallax_pair(seed, width, height, max_disp=0.0, color=color, **kwargs)


def parallax_pair(seed: int = 0, width: int = 320, height: int = 240, max_disp: float = 8.0,
                  color: bool = False, **kwargs):
    """Pair related by a homography plus a smooth local displacement.

    Target pixel q shows the source content at H^-1 q + d(q), |d| <= max_disp.
    Returns ``(img1, img2, H, d)``.
    """
    rng = np.random.default_rng(seed)
    h = random_homography(rng, width, height, **kwargs)
    margin = 2 * width
    base = texture(height + 2 * margin, width + 2 * margin, seed=seed + 1000, color=color)
    hinv = np.linalg.inv(h)
    if max_disp > 0:
        d = displacement_field(rng, width, height, max_disp)
    else:
        def d(q):
            return np.zeros_like(np.asarray(q, dtype=np.float64))
    img1 = render(base, lambda q: q + margin, height, width)
    img2 = render(base, lambda q: apply_h(hinv, q) + d(q) + margin, height, width)
    return RasterImage(img1), RasterImage(img2), h, d

"""Alignment quality: RMSE of (1 - NCC) over local windows in the overlap."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .imaging import as_luma

# window variance below this counts as a constant patch
FLAT_VARIANCE = 1e-14


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    window: int = 3
    scale: float = 255.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")


@dataclass(frozen=True)
class MetricResult:
    rmse_ncc: float
    raw: float
    overlap_pixels: int
    window: int

    def to_dict(self) -> dict:
        return {"rmse_ncc": self.rmse_ncc, "rmse_ncc_raw": self.raw,
                "overlap_pixels": self.overlap_pixels, "window": self.window}


def overlap_region(mask_a, mask_b, window: int) -> np.ndarray:
    """Pixels whose full window lies inside both masks."""
    both = np.asarray(mask_a, dtype=bool) & np.asarray(mask_b, dtype=bool)
    return ndimage.minimum_filter(both.astype(np.uint8), size=window, mode="constant", cval=0).astype(bool)


def ncc_map(a, b, omega: np.ndarray, window: int) -> np.ndarray:
    """NCC of the window pairs centred on each pixel of ``omega``.

    Both windows constant: 1. Exactly one constant: 0.
    """
    half = window // 2
    ys, xs = np.nonzero(omega)
    wa = sliding_window_view(a, (window, window))[ys - half, xs - half].reshape(len(ys), -1)
    wb = sliding_window_view(b, (window, window))[ys - half, xs - half].reshape(len(ys), -1)
    da = wa - wa.mean(axis=1, keepdims=True)
    db = wb - wb.mean(axis=1, keepdims=True)
    va = np.sum(da * da, axis=1)
    vb = np.sum(db * db, axis=1)
    flat_a = va <= FLAT_VARIANCE * window * window
    flat_b = vb <= FLAT_VARIANCE * window * window
    with np.errstate(divide="ignore", invalid="ignore"):
        ncc = np.sum(da * db, axis=1) / np.sqrt(va * vb)
    ncc = np.where(flat_a & flat_b, 1.0, np.where(flat_a | flat_b, 0.0, ncc))
    return np.clip(ncc, -1.0, 1.0)


def evaluate(a, mask_a, b, mask_b, cfg: MetricConfig = MetricConfig()) -> MetricResult:
    la, lb = as_luma(a), as_luma(b)
    if la.shape != lb.shape:
        raise MetricError(f"image sizes differ: {la.shape} vs {lb.shape}")
    ma = np.ones(la.shape, bool) if mask_a is None else np.asarray(mask_a, dtype=bool)
    mb = np.ones(lb.shape, bool) if mask_b is None else np.asarray(mask_b, dtype=bool)
    if ma.shape != la.shape or mb.shape != lb.shape:
        raise MetricError("mask size does not match its image")
    omega = overlap_region(ma, mb, cfg.window)
    n = int(omega.sum())
    if n == 0:
        raise MetricError("empty overlap: no pixel has full window support in both masks")
    ncc = ncc_map(la, lb, omega, cfg.window)
    raw = math.sqrt(max(0.0, float(np.mean(1.0 - ncc))))
    return MetricResult(raw * cfg.scale, raw, n, cfg.window)


def rmse_ncc(a, mask_a, b, mask_b, cfg: MetricConfig = MetricConfig()) -> float:
    """sqrt(mean over the overlap of (1 - NCC)), times ``cfg.scale`` (255 by default)."""
    return evaluate(a, mask_a, b, mask_b, cfg).rmse_ncc

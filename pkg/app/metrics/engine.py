from __future__ import annotations

import math
from typing import Optional

import numpy as np

from app.errors import DimensionError
from app.models.image import PixelImage
from app.models.latent import token_mask_from_ids
from app.models.report import RunReport, SpeedupResult
from app.models.routing import TokenRouting

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.0001
SSIM_C2 = 0.0009


def _pair(a: PixelImage, b: PixelImage) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"image shape mismatch: {a.data.shape} vs {b.data.shape}")
    return a.data, b.data


def _psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def psnr(a: PixelImage, b: PixelImage) -> float:
    """10 log10(1 / MSE) for [0, 1] images, capped at 99 dB."""
    x, y = _pair(a, b)
    return _psnr_from_mse(float(np.mean((x - y) ** 2)))


def region_psnr(a: PixelImage, b: PixelImage, edited: np.ndarray) -> float:
    """
    PSNR over the pixels of tokens outside `edited`.

    edited: (h, w) boolean token mask; pixel patches follow the image patch size
    """
    x, y = _pair(a, b)
    p = a.patch
    keep = ~np.repeat(np.repeat(np.asarray(edited, dtype=bool), p, axis=0), p, axis=1)
    if keep.shape != x.shape[:2]:
        raise DimensionError(f"token mask {np.shape(edited)} does not tile image {x.shape[:2]}")
    if not keep.any():
        return PSNR_CAP_DB
    return _psnr_from_mse(float(np.mean((x[keep] - y[keep]) ** 2)))


def ssim(
    a: PixelImage,
    b: PixelImage,
    window: int = SSIM_WINDOW,
    c1: float = SSIM_C1,
    c2: float = SSIM_C2,
) -> float:
    """Mean SSIM over non-overlapping window x window blocks of the luma (channel mean)."""
    x, y = _pair(a, b)
    lx, ly = x.mean(axis=-1), y.mean(axis=-1)
    hh, ww = lx.shape
    if hh % window or ww % window:
        raise DimensionError(f"image {hh}x{ww} not divisible by SSIM window {window}")

    def blocks(z: np.ndarray) -> np.ndarray:
        return z.reshape(hh // window, window, ww // window, window).transpose(0, 2, 1, 3).reshape(
            -1, window * window
        )

    bx, by = blocks(lx), blocks(ly)
    mx, my = bx.mean(axis=1), by.mean(axis=1)
    vx = ((bx - mx[:, None]) ** 2).mean(axis=1)
    vy = ((by - my[:, None]) ** 2).mean(axis=1)
    cov = ((bx - mx[:, None]) * (by - my[:, None])).mean(axis=1)
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx ** 2 + my ** 2 + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def speedup_ratio(baseline: RunReport, spot: RunReport) -> SpeedupResult:
    """Baseline forward FLOPs / method forward FLOPs; wall-clock ratio reported alongside."""
    wall: Optional[float] = None
    if spot.wall_clock_seconds > 0:
        wall = baseline.wall_clock_seconds / spot.wall_clock_seconds
    spot_flops = spot.total_forward_flops
    if spot_flops == 0:
        return SpeedupResult(flop_ratio=math.inf, wall_clock_ratio=wall, infinite=True)
    return SpeedupResult(flop_ratio=baseline.total_forward_flops / spot_flops, wall_clock_ratio=wall)


def selector_precision_recall(routing: TokenRouting, edited: np.ndarray) -> tuple[float, float]:
    """
    Precision/recall of the active set against a known edit mask.

    An empty active set has precision 1; an empty mask has recall 1.
    """
    truth = np.asarray(edited, dtype=bool).reshape(-1)
    predicted = token_mask_from_ids(routing.active, routing.num_tokens)
    hit = int(np.sum(predicted & truth))
    precision = hit / int(predicted.sum()) if predicted.any() else 1.0
    recall = hit / int(truth.sum()) if truth.any() else 1.0
    return precision, recall

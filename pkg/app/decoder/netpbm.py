from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from app.errors import ReportIOError
from app.models.image import PixelImage


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def _save(array: np.ndarray, path: Path) -> None:
    # uint8 (h, w, 3) saves as RGB P6, (h, w) as L P5
    try:
        Image.fromarray(array).save(path, format="PPM")
    except OSError as e:
        raise ReportIOError(f"cannot write image {path}: {e}") from e


def write_ppm(image: PixelImage, path: str | Path) -> None:
    """Binary P6, 8-bit."""
    _save(_to_uint8(image.data), Path(path))


def write_pgm(field: np.ndarray, path: str | Path) -> None:
    """Binary P5; values min-max scaled to 8 bits (a constant field maps to 0)."""
    field = np.asarray(field, dtype=np.float64)
    lo, hi = float(field.min()), float(field.max())
    scaled = (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)
    _save(_to_uint8(scaled), Path(path))


def read_pixels(path: str | Path) -> np.ndarray:
    """uint8 array of a PPM (h, w, 3) or PGM (h, w)."""
    try:
        with Image.open(path) as im:
            fmt, pixels = im.format, np.asarray(im)
    except OSError as e:
        raise ReportIOError(f"cannot read {path}: {e}") from e
    if fmt != "PPM":
        raise ReportIOError(f"{path}: not a netpbm image")
    return pixels


def write_scores_csv(scores: np.ndarray, w: int, path: str | Path) -> None:
    """Lossless per-token score export: token,row,col,score (repr floats)."""
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["token", "row", "col", "score"])
            for i, s in enumerate(np.asarray(scores, dtype=np.float64).ravel()):
                writer.writerow([i, i // w, i % w, repr(float(s))])
    except OSError as e:
        raise ReportIOError(f"cannot write score CSV {path}: {e}") from e

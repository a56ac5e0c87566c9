from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass(frozen=True, eq=False)
class PixelImage:
    """
    RGB image with values in [0, 1].

    data: float64 array (height, width, 3)
    patch: pixels per token side; pixel patch i covers token i only
    """
    data: np.ndarray
    patch: int

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def patch_of(self, token: int, grid_w: int) -> np.ndarray:
        r, c = divmod(token, grid_w)
        p = self.patch
        return self.data[r * p:(r + 1) * p, c * p:(c + 1) * p]


@dataclass(frozen=True, eq=False)
class DecoderFeatures:
    """Shallow decoder feature maps; layers[l] has shape (h*2^(l+1), w*2^(l+1), c_l)."""
    layers: List[np.ndarray]

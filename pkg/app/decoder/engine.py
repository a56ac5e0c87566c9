from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from app.models.image import DecoderFeatures, PixelImage
from app.models.latent import LatentGrid
from app.tensor.rng import SplitMix64, uniform_fan_in

log = logging.getLogger("latent_decoder")

DECODER_BIAS_BOUND = 0.1


def _nearest_up2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True, eq=False)
class LatentDecoder:
    """
    Fixed seeded decoder standing in for the VAE.

    Feature path (for scoring): per layer, channel mix -> x2 nearest expansion -> tanh,
    each layer consuming the previous one.
    Pixel path (for output): token i -> its own p x p x 3 patch through one affine map
    and a sigmoid, so pixels of patch i depend on token i only.
    """
    channels: int = 8
    layer_channels: Sequence[int] = (16, 16)
    patch: int = 8
    seed: int = 7
    _mix: List[np.ndarray] = field(init=False, repr=False)
    _bias: List[np.ndarray] = field(init=False, repr=False)
    _pix_w: np.ndarray = field(init=False, repr=False)
    _pix_b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        rng = SplitMix64(self.seed)
        mix, bias = [], []
        fan_in = self.channels
        for c_out in self.layer_channels:
            mix.append(uniform_fan_in(rng, fan_in, (fan_in, c_out)))
            bias.append(rng.uniform((c_out,), -DECODER_BIAS_BOUND, DECODER_BIAS_BOUND))
            fan_in = c_out
        p = self.patch
        object.__setattr__(self, "_mix", mix)
        object.__setattr__(self, "_bias", bias)
        object.__setattr__(self, "_pix_w", uniform_fan_in(rng, self.channels, (self.channels, p * p * 3)))
        object.__setattr__(self, "_pix_b", rng.uniform((p * p * 3,), -DECODER_BIAS_BOUND, DECODER_BIAS_BOUND))

    @property
    def num_layers(self) -> int:
        return len(self.layer_channels)

    def decode_features(self, latent: LatentGrid) -> DecoderFeatures:
        layers: List[np.ndarray] = []
        x = latent.data
        for w, b in zip(self._mix, self._bias):
            x = np.tanh(_nearest_up2(x @ w + b))
            layers.append(x)
        return DecoderFeatures(layers=layers)

    def decode_pixels(self, latent: LatentGrid) -> PixelImage:
        p = self.patch
        h, w = latent.h, latent.w
        patches = _sigmoid(latent.tokens() @ self._pix_w + self._pix_b)
        img = patches.reshape(h, w, p, p, 3).transpose(0, 2, 1, 3, 4).reshape(h * p, w * p, 3)
        return PixelImage(data=img, patch=p)

    def bias_pixel(self) -> np.ndarray:
        """Pixel patch a zero latent decodes to."""
        return _sigmoid(self._pix_b).reshape(self.patch, self.patch, 3)

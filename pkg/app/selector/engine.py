from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from app.decoder.engine import LatentDecoder
from app.errors import ConfigError, DimensionError
from app.models.latent import ConditionLatent, LatentGrid
from app.models.routing import ScoreMap, TokenRouting
from app.tensor.core import avg_pool2d, bilinear_resize, channel_normalize

log = logging.getLogger("spot_selector")

SelectorMetric = Literal["lpips-like", "raw-l2"]


@dataclass(frozen=True)
class SelectorConfig:
    """
    tau: reuse threshold (token reused when score <= tau)
    layers: decoder layer indices used for scoring (None = all)
    weights: per-layer weights w_l (None = 1.0 each); the weighted sum is divided by
        the number of scored layers, so the default weighs every layer 1/|L|
    metric: lpips-like (normalized decoder features) or raw-l2 (latent distance)
    """
    tau: float = 0.2
    layers: Optional[Sequence[int]] = None
    weights: Optional[Sequence[float]] = None
    metric: SelectorMetric = "lpips-like"

    def resolve(self, num_layers: int) -> tuple[list[int], list[float]]:
        layers = list(range(num_layers)) if self.layers is None else list(self.layers)
        if not layers or any(l < 0 or l >= num_layers for l in layers):
            raise ConfigError(f"selector layers {layers} invalid for a {num_layers}-layer decoder")
        weights = [1.0] * len(layers) if self.weights is None else [float(w) for w in self.weights]
        if len(weights) != len(layers) or any(w < 0 for w in weights):
            raise ConfigError(f"selector weights {weights} must be non-negative, one per layer")
        return layers, weights


def lpips_score_map(
    x0_hat: LatentGrid,
    y: ConditionLatent,
    decoder: LatentDecoder,
    config: SelectorConfig,
) -> ScoreMap:
    """
    Per-token perceptual score:

      D_l = sum_c (Norm(phi_l(x0_hat)) - Norm(phi_l(y)))^2      per location
      M   = sum_l w_l * Resize(D_l, (H, W)) / |L|                 (H, W) = finest layer
      s   = Flatten(AvgPool(M, H/h))
    """
    x0_hat.require_same_shape(y.grid, "condition")
    layers, weights = config.resolve(decoder.num_layers)
    fx = decoder.decode_features(x0_hat).layers
    fy = decoder.decode_features(y.grid).layers

    finest = max(layers, key=lambda l: fx[l].shape[0])
    H, W = fx[finest].shape[0], fx[finest].shape[1]
    M = np.zeros((H, W))
    for l, w_l in zip(layers, weights):
        diff = channel_normalize(fx[l]) - channel_normalize(fy[l])
        d_l = np.sum(diff * diff, axis=-1)
        M += w_l * bilinear_resize(d_l, H, W)
    M /= len(layers)

    h, w = x0_hat.h, x0_hat.w
    if H % h or W % w or H // h != W // w:
        raise DimensionError(f"feature map {H}x{W} does not tile the {h}x{w} token grid")
    pooled = avg_pool2d(M, H // h, H // h)
    return ScoreMap(scores=pooled.reshape(-1), h=h, w=w)


def raw_l2_score_map(x0_hat: LatentGrid, y: ConditionLatent, config: SelectorConfig | None = None) -> ScoreMap:
    """Per-token squared latent distance, no decoder."""
    x0_hat.require_same_shape(y.grid, "condition")
    diff = x0_hat.tokens() - y.grid.tokens()
    return ScoreMap(scores=np.sum(diff * diff, axis=-1), h=x0_hat.h, w=x0_hat.w)


def score_tokens(
    x0_hat: LatentGrid,
    y: ConditionLatent,
    decoder: LatentDecoder,
    config: SelectorConfig,
) -> ScoreMap:
    if config.metric == "raw-l2":
        return raw_l2_score_map(x0_hat, y, config)
    return lpips_score_map(x0_hat, y, decoder, config)


def route_tokens(scores: ScoreMap, tau: float) -> TokenRouting:
    """R = {i : s_i <= tau}, A = the rest; ties go to reuse."""
    s = scores.scores
    reuse_mask = s <= tau
    return TokenRouting(
        active=np.flatnonzero(~reuse_mask),
        reuse=np.flatnonzero(reuse_mask),
        tau=float(tau),
        num_tokens=s.size,
        scores=scores,
    )


def select(
    x0_hat: LatentGrid,
    y: ConditionLatent,
    decoder: LatentDecoder,
    config: SelectorConfig,
) -> TokenRouting:
    routing = route_tokens(score_tokens(x0_hat, y, decoder, config), config.tau)
    log.debug("routing active=%d reuse=%d tau=%s", routing.active.size, routing.reuse.size, config.tau)
    return routing

from __future__ import annotations

from typing import List, Optional

import numpy as np

from app.errors import CacheIncompleteError, DimensionError, DomainError
from app.flow.base import PartialOutput, VelocityModel
from app.fusion.cache import ConditionCache
from app.models.latent import BlockKV, ConditionLatent, LatentGrid, ModelConfig, PromptEmbedding
from app.models.routing import TokenRouting
from app.tensor.core import FlopCounter


def analytic_velocity(x_t: LatentGrid, target: LatentGrid, t: float) -> LatentGrid:
    """v = (x_t - target) / t, so that x_t - t * v == target."""
    if t <= 0.0:
        raise DomainError(f"analytic_velocity: t={t} must be > 0")
    x_t.require_same_shape(target)
    return LatentGrid((x_t.data - target.data) / t)


class AnalyticVelocityModel(VelocityModel):
    """
    Straight-line oracle whose one-step reconstruction is always `target`.

    It has no transformer blocks, so its K/V taps are empty and any cache is complete.
    """

    def __init__(self, target: LatentGrid, config: ModelConfig | None = None):
        self.target = target
        self.config = config or ModelConfig(kind="analytic", blocks=0)

    def forward_full(
        self,
        x_t: LatentGrid,
        y: ConditionLatent,
        p: PromptEmbedding,
        t: float,
        counter: FlopCounter,
    ) -> tuple[LatentGrid, List[BlockKV]]:
        y.grid.require_same_shape(x_t, "condition")
        v = analytic_velocity(x_t, self.target, t)
        counter.add_elementwise(2 * x_t.data.size)
        return v, []

    def forward_partial(
        self,
        x_active: np.ndarray,
        routing: TokenRouting,
        p: PromptEmbedding,
        t: float,
        cache: ConditionCache,
        counter: FlopCounter,
        condition: Optional[ConditionLatent] = None,
    ) -> PartialOutput:
        if cache is None:
            raise CacheIncompleteError("analytic forward_partial called without a cache")
        if t <= 0.0:
            raise DomainError(f"analytic forward_partial: t={t} must be > 0")
        target = self.target.tokens()[routing.active]
        if x_active.shape != target.shape:
            raise DimensionError(f"active latents {x_active.shape} vs target rows {target.shape}")
        counter.add_elementwise(2 * x_active.size)
        return PartialOutput(velocity=(x_active - target) / t)

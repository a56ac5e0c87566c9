from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.fusion.cache import ConditionCache
from app.models.latent import BlockKV, ConditionLatent, LatentGrid, ModelConfig, PromptEmbedding
from app.models.routing import TokenRouting
from app.tensor.core import FlopCounter


@dataclass
class PartialOutput:
    """
    Result of a partial forward.

    velocity: (|A|, c) rows in ascending active-token order
    image_kv: per block (K_A, V_A) computed this step
    prompt_kv / condition_kv: per block fresh K/V when those streams were recomputed
    """
    velocity: np.ndarray
    image_kv: List[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    prompt_kv: Optional[List[tuple[np.ndarray, np.ndarray]]] = None
    condition_kv: Optional[List[tuple[np.ndarray, np.ndarray]]] = None


class VelocityModel(ABC):
    """
    Velocity-field contract v(X_t, C, t) with per-block K/V taps.

    Any model must implement:
    - forward_full(): all tokens, returns velocity and every block's K/V
    - forward_partial(): active tokens only, attending over the condition cache
    """

    config: ModelConfig

    @property
    def num_blocks(self) -> int:
        return self.config.blocks if self.config.kind == "toy-dit" else 0

    @abstractmethod
    def forward_full(
        self,
        x_t: LatentGrid,
        y: ConditionLatent,
        p: PromptEmbedding,
        t: float,
        counter: FlopCounter,
    ) -> tuple[LatentGrid, List[BlockKV]]:
        raise NotImplementedError

    @abstractmethod
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
        raise NotImplementedError

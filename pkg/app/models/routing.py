from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.errors import RoutingInvariantError
from app.models.latent import token_mask_from_ids


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Per-token perceptual scores, row-major over the h x w token grid; all >= 0."""
    scores: np.ndarray
    h: int
    w: int

    @property
    def grid(self) -> np.ndarray:
        return self.scores.reshape(self.h, self.w)


@dataclass(frozen=True, eq=False)
class TokenRouting:
    """
    Partition of image tokens into active (regenerated) and reuse (non-edited) sets.

    active, reuse: sorted int64 token ids
    tau: threshold that produced the split
    """
    active: np.ndarray
    reuse: np.ndarray
    tau: float
    num_tokens: int
    scores: ScoreMap | None = None

    def __post_init__(self) -> None:
        active = np.sort(np.asarray(self.active, dtype=np.int64))
        reuse = np.sort(np.asarray(self.reuse, dtype=np.int64))
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "reuse", reuse)

    @property
    def indicator(self) -> np.ndarray:
        """r_i = 1 for reused tokens."""
        r = np.zeros(self.num_tokens, dtype=np.int8)
        r[self.reuse] = 1
        return r

    def validate(self) -> None:
        if np.intersect1d(self.active, self.reuse).size:
            overlap = np.intersect1d(self.active, self.reuse).tolist()
            raise RoutingInvariantError(f"active and reuse sets overlap at tokens {overlap[:8]}")
        if self.active.size + self.reuse.size != self.num_tokens:
            raise RoutingInvariantError(
                f"routing covers {self.active.size + self.reuse.size} of {self.num_tokens} tokens"
            )

    @classmethod
    def from_active(cls, active, num_tokens: int, tau: float = float("nan")) -> "TokenRouting":
        mask = token_mask_from_ids(active, num_tokens)
        return cls(
            active=np.flatnonzero(mask),
            reuse=np.flatnonzero(~mask),
            tau=tau,
            num_tokens=num_tokens,
        )

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Literal

import numpy as np

from app.errors import ConfigError, DimensionError

ModelKind = Literal["analytic", "toy-dit"]
TOKEN_GROUPS = ("prompt", "image", "condition")


@dataclass(frozen=True, eq=False)
class LatentGrid:
    """
    h x w grid of c-channel tokens.

    Token i addresses row-major position (i // w, i % w).
    data: float64 array of shape (h, w, c)
    """
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"LatentGrid needs h x w x c data, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def num_tokens(self) -> int:
        return self.h * self.w

    def tokens(self) -> np.ndarray:
        """(h*w, c) view in token order."""
        return self.data.reshape(self.num_tokens, self.c)

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, h: int, w: int) -> "LatentGrid":
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.shape[0] != h * w:
            raise DimensionError(f"{tokens.shape[0]} tokens do not fill a {h}x{w} grid")
        return cls(tokens.reshape(h, w, -1).copy())

    @classmethod
    def zeros(cls, h: int, w: int, c: int) -> "LatentGrid":
        return cls(np.zeros((h, w, c)))

    def require_same_shape(self, other: "LatentGrid", what: str = "latent") -> None:
        if self.shape != other.shape:
            raise DimensionError(f"{what} shape mismatch: {self.shape} vs {other.shape}")


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    """Instruction-token features P, m x d with m >= 1."""
    tokens: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.tokens, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DimensionError(f"prompt must be m x d with m >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("prompt contains non-finite entries")
        object.__setattr__(self, "tokens", arr)

    @property
    def m(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True, eq=False)
class ConditionLatent:
    """Condition image latent Y, spatially aligned with the noisy latent."""
    grid: LatentGrid


@dataclass
class BlockKV:
    """
    Keys/values of one transformer block, split by token group.

    keys[group], values[group]: (tokens_in_group, d_model) arrays; heads are
    contiguous d_head slices of the last axis.
    """
    block: int
    keys: Dict[str, np.ndarray] = field(default_factory=dict)
    values: Dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self, d_model: int | None = None) -> None:
        for group in TOKEN_GROUPS:
            if group not in self.keys or group not in self.values:
                raise DimensionError(f"block {self.block}: missing '{group}' K/V")
            k, v = self.keys[group], self.values[group]
            if k.shape != v.shape:
                raise DimensionError(
                    f"block {self.block} group '{group}': keys {k.shape} vs values {v.shape}"
                )
            if d_model is not None and k.shape[1] != d_model:
                raise DimensionError(
                    f"block {self.block} group '{group}': width {k.shape[1]} != {d_model}"
                )


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = "toy-dit"
    blocks: int = 4
    heads: int = 4
    d_model: int = 64
    d_head: int = 16
    seed: int = 0
    channels: int = 8
    tokens: int = 256
    prompt_dim: int = 64
    positional: bool = True

    def validate(self) -> None:
        if self.kind not in ("analytic", "toy-dit"):
            raise ConfigError(f"unknown model kind '{self.kind}'")
        if self.kind == "analytic":
            return
        for name in ("blocks", "heads", "d_model", "d_head", "channels", "tokens", "prompt_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name}={getattr(self, name)} must be >= 1")
        if self.d_model != self.heads * self.d_head:
            raise ConfigError(
                f"d_model={self.d_model} != heads*d_head={self.heads}*{self.d_head}"
            )


def token_mask_from_ids(ids: List[int] | np.ndarray, n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(ids, dtype=np.int64)] = True
    return mask

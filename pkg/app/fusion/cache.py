from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np

from app.errors import CacheIncompleteError, DimensionError, DomainError, RoutingInvariantError
from app.models.latent import BlockKV
from app.models.routing import TokenRouting

log = logging.getLogger("spot_fusion")

FusionMode = Literal["spotfusion", "static", "naive-skip", "no-condition-cache"]
AlphaKind = Literal["cos2", "linear"]


def alpha_cos2(t: float) -> float:
    """cos^2(pi t / 2): 0 at t=1 (pure condition), 1 at t=0 (pure cache)."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"alpha_cos2: t={t} outside [0, 1]")
    if t == 1.0:
        return 0.0
    return math.cos(0.5 * math.pi * t) ** 2


def alpha_linear(t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"alpha_linear: t={t} outside [0, 1]")
    return 1.0 - t


_ALPHAS: dict[str, Callable[[float], float]] = {"cos2": alpha_cos2, "linear": alpha_linear}


@dataclass(frozen=True)
class FusionConfig:
    """
    alpha: blending schedule
    reset_interval: spot steps between forced full refreshes (math.inf disables)
    mode:
      - spotfusion: blend reused K/V toward the condition K/V
      - static: reuse cached K/V as-is
      - naive-skip: drop reused tokens from the key/value set
      - no-condition-cache: blend as spotfusion, but recompute prompt and condition streams
    """
    alpha: AlphaKind = "cos2"
    reset_interval: float = 10
    mode: FusionMode = "spotfusion"

    def alpha_at(self, t: float) -> float:
        return _ALPHAS[self.alpha](t)


@dataclass
class CachedBlock:
    prompt_k: np.ndarray
    prompt_v: np.ndarray
    condition_k: np.ndarray
    condition_v: np.ndarray
    image_k: np.ndarray
    image_v: np.ndarray
    image_valid: np.ndarray


@dataclass
class ConditionCache:
    """
    Per-block K/V for prompt, condition and image tokens (image rows by token id).

    last_full_step: step index of the forward that last filled the cache
    steps_since_reset: spot steps since that fill
    dropped: image token ids excluded from the key set (naive-skip)
    """
    blocks: List[CachedBlock]
    num_tokens: int
    last_full_step: int
    steps_since_reset: int = 0
    resets: int = 0
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def require_tokens(self, ids: np.ndarray) -> None:
        """Every id must resolve in every block."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return
        if ids.min() < 0 or ids.max() >= self.num_tokens:
            raise CacheIncompleteError(f"token ids outside [0, {self.num_tokens}) requested")
        for b, blk in enumerate(self.blocks):
            missing = ids[~blk.image_valid[ids]]
            if missing.size:
                raise CacheIncompleteError(
                    f"block {b}: no cached K/V for tokens {missing[:8].tolist()}"
                )

    def store_image(self, block: int, ids: np.ndarray, k: np.ndarray, v: np.ndarray) -> None:
        blk = self.blocks[block]
        blk.image_k[ids] = k
        blk.image_v[ids] = v
        blk.image_valid[ids] = True

    def store_condition(self, block: int, k: np.ndarray, v: np.ndarray) -> None:
        blk = self.blocks[block]
        blk.condition_k = k.copy()
        blk.condition_v = v.copy()

    def store_prompt(self, block: int, k: np.ndarray, v: np.ndarray) -> None:
        blk = self.blocks[block]
        blk.prompt_k = k.copy()
        blk.prompt_v = v.copy()


def _blocks_from_kv(kv: Sequence[BlockKV], num_tokens: int) -> List[CachedBlock]:
    blocks: List[CachedBlock] = []
    for b, entry in enumerate(kv):
        if entry.block != b:
            raise CacheIncompleteError(f"kv list out of order: position {b} holds block {entry.block}")
        try:
            entry.validate()
        except DimensionError as e:
            raise CacheIncompleteError(str(e)) from e
        if entry.keys["image"].shape[0] != num_tokens or entry.keys["condition"].shape[0] != num_tokens:
            raise CacheIncompleteError(
                f"block {b}: image/condition K/V must cover {num_tokens} tokens"
            )
        blocks.append(
            CachedBlock(
                prompt_k=entry.keys["prompt"].copy(),
                prompt_v=entry.values["prompt"].copy(),
                condition_k=entry.keys["condition"].copy(),
                condition_v=entry.values["condition"].copy(),
                image_k=entry.keys["image"].copy(),
                image_v=entry.values["image"].copy(),
                image_valid=np.ones(num_tokens, dtype=bool),
            )
        )
    return blocks


def init_cache(
    kv_from_full_step: Sequence[BlockKV],
    step: int,
    num_tokens: int,
    expected_blocks: Optional[int] = None,
) -> ConditionCache:
    """Mirror a full forward's K/V; counters start at zero."""
    if expected_blocks is not None and len(kv_from_full_step) != expected_blocks:
        raise CacheIncompleteError(
            f"kv covers {len(kv_from_full_step)} blocks, model has {expected_blocks}"
        )
    cache = ConditionCache(
        blocks=_blocks_from_kv(kv_from_full_step, num_tokens),
        num_tokens=num_tokens,
        last_full_step=step,
    )
    log.debug("cache initialized step=%d blocks=%d", step, len(cache.blocks))
    return cache


def blend_cache(
    cache: ConditionCache,
    t: float,
    routing: TokenRouting,
    config: FusionConfig,
) -> ConditionCache:
    """
    Relax reused-token K/V toward the condition K/V at the same grid index:

      K_i <- alpha(t) * K_i + (1 - alpha(t)) * K_y,i   (same for V)

    Blending is cumulative across spot steps; prompt and condition entries are untouched.
    """
    reuse = routing.reuse
    cache.require_tokens(reuse)
    cache.dropped = np.zeros(0, dtype=np.int64)

    if config.mode == "naive-skip":
        cache.dropped = reuse.copy()
        return cache
    if config.mode == "static" or reuse.size == 0:
        return cache

    a = config.alpha_at(t)
    for blk in cache.blocks:
        blk.image_k[reuse] = a * blk.image_k[reuse] + (1.0 - a) * blk.condition_k[reuse]
        blk.image_v[reuse] = a * blk.image_v[reuse] + (1.0 - a) * blk.condition_v[reuse]
    return cache


def assemble_attention_inputs(
    cache: ConditionCache,
    block: int,
    routing: TokenRouting,
    q_p: np.ndarray,
    q_active: np.ndarray,
    k_active: np.ndarray,
    v_active: np.ndarray,
    *,
    fresh_prompt: Optional[tuple[np.ndarray, np.ndarray]] = None,
    fresh_condition: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Build (Q_active, K_full, V_full) for one block.

    Q_active = [Q_P, Q_A (, Q_Y when the condition stream is recomputed)]
    K_full   = [K_P, K_A, K_R, K_Y]  in that order; A, R and Y rows ascending by token id.

    fresh_prompt: (K_P, V_P) computed this step instead of the cached ones
    fresh_condition: (Q_Y, K_Y, V_Y) computed this step instead of the cached K/V
    """
    overlap = np.intersect1d(routing.active, routing.reuse)
    if overlap.size:
        raise RoutingInvariantError(f"active and reuse sets overlap at tokens {overlap[:8].tolist()}")
    if routing.active.size == 0:
        raise RoutingInvariantError("no active tokens: the model call must be skipped")
    if q_active.shape[0] != routing.active.size or k_active.shape[0] != routing.active.size:
        raise RoutingInvariantError(
            f"{q_active.shape[0]} active query rows for {routing.active.size} active tokens"
        )

    blk = cache.blocks[block]
    reuse = np.setdiff1d(routing.reuse, cache.dropped, assume_unique=True)
    cache.require_tokens(reuse)

    if fresh_prompt is not None:
        k_p, v_p = fresh_prompt
    else:
        k_p, v_p = blk.prompt_k, blk.prompt_v

    q_parts = [q_p, q_active]
    if fresh_condition is not None:
        q_y, k_y, v_y = fresh_condition
        q_parts.append(q_y)
    else:
        k_y, v_y = blk.condition_k, blk.condition_v

    q = np.concatenate(q_parts, axis=0)
    k = np.concatenate([k_p, k_active, blk.image_k[reuse], k_y], axis=0)
    v = np.concatenate([v_p, v_active, blk.image_v[reuse], v_y], axis=0)
    return q, k, v


def reload_cache(cache: ConditionCache, kv: Sequence[BlockKV], step: int) -> None:
    cache.blocks = _blocks_from_kv(kv, cache.num_tokens)
    cache.last_full_step = step
    cache.dropped = np.zeros(0, dtype=np.int64)


def maybe_reset(
    cache: ConditionCache,
    config: FusionConfig,
    refresh: Callable[[], Optional[Sequence[BlockKV]]],
    step: int,
) -> Literal["kept", "refreshed"]:
    """
    Advance the reset counter; once it reaches reset_interval, call `refresh`
    (which runs the full forward and returns its K/V) and reload the cache.

    `refresh` may return None when no token consumes the refresh this step; the
    reset is still counted and the counter restarts.
    """
    cache.steps_since_reset += 1
    if cache.steps_since_reset < config.reset_interval:
        return "kept"

    kv = refresh()
    if kv is not None:
        reload_cache(cache, kv, step)
    cache.steps_since_reset = 0
    cache.resets += 1
    log.info("cache reset step=%d refreshed=%s", step, kv is not None)
    return "refreshed"

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.errors import CacheIncompleteError, ConfigError, DimensionError
from app.flow.base import PartialOutput, VelocityModel
from app.fusion.cache import ConditionCache, assemble_attention_inputs
from app.models.latent import BlockKV, ConditionLatent, LatentGrid, ModelConfig, PromptEmbedding
from app.models.routing import TokenRouting
from app.tensor.core import FlopCounter, matmul, softmax_rows
from app.tensor.rng import SplitMix64, uniform_fan_in

log = logging.getLogger("toy_dit")

LN_EPS = 1e-6


@dataclass(frozen=True)
class BlockWeights:
    w_mod: np.ndarray  # (2D, 4D) -> scale1, shift1, scale2, shift2
    b_mod: np.ndarray  # (4D,)
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray  # (D, 2D)
    w2: np.ndarray  # (2D, D)


@dataclass(frozen=True)
class ToyDiTWeights:
    w_image: np.ndarray      # (c, D)
    w_condition: np.ndarray  # (c, D)
    w_prompt: np.ndarray     # (prompt_dim, D)
    pos_image: np.ndarray    # (N, D)
    pos_condition: np.ndarray
    blocks: List[BlockWeights]
    w_final_mod: np.ndarray  # (2D, 2D) -> scale, shift
    w_out: np.ndarray        # (D, c)


def timestep_embedding(t: float, d_model: int) -> np.ndarray:
    """2*d_model sinusoidal features of 1000*t."""
    freqs = np.exp(-math.log(10000.0) * np.arange(d_model, dtype=np.float64) / d_model)
    args = 1000.0 * t * freqs
    return np.concatenate([np.cos(args), np.sin(args)])


def _layer_norm(x: np.ndarray, counter: FlopCounter) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    counter.add_elementwise(5 * x.size)
    return (x - mu) / np.sqrt(var + LN_EPS)


def _modulate(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, counter: FlopCounter) -> np.ndarray:
    counter.add_elementwise(2 * x.size)
    return x * (1.0 + scale) + shift


def attend(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    heads: int,
    d_head: int,
    counter: FlopCounter,
) -> np.ndarray:
    """Multi-head scaled dot-product attention; heads are contiguous d_head slices."""
    out = np.empty((q.shape[0], heads * d_head))
    inv = 1.0 / math.sqrt(d_head)
    for h in range(heads):
        sl = slice(h * d_head, (h + 1) * d_head)
        logits = matmul(q[:, sl], k[:, sl].T, counter) * inv
        counter.add_elementwise(logits.size)
        weights = softmax_rows(logits, counter)
        out[:, sl] = matmul(weights, v[:, sl], counter)
    return out


def init_toy_dit(config: ModelConfig) -> "ToyDiT":
    """
    Seeded weights: every tensor drawn uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
    from one splitmix64 stream, in a fixed order.
    """
    if config.kind != "toy-dit":
        raise ConfigError(f"init_toy_dit needs kind='toy-dit', got '{config.kind}'")
    config.validate()

    rng = SplitMix64(config.seed)
    d, c, n = config.d_model, config.channels, config.tokens

    w_image = uniform_fan_in(rng, c, (c, d))
    w_condition = uniform_fan_in(rng, c, (c, d))
    w_prompt = uniform_fan_in(rng, config.prompt_dim, (config.prompt_dim, d))
    pos_image = uniform_fan_in(rng, d, (n, d))
    pos_condition = uniform_fan_in(rng, d, (n, d))
    if not config.positional:
        pos_image = np.zeros_like(pos_image)
        pos_condition = np.zeros_like(pos_condition)

    blocks: List[BlockWeights] = []
    for _ in range(config.blocks):
        blocks.append(
            BlockWeights(
                w_mod=uniform_fan_in(rng, 2 * d, (2 * d, 4 * d)),
                b_mod=uniform_fan_in(rng, 2 * d, (4 * d,)),
                wq=uniform_fan_in(rng, d, (d, d)),
                wk=uniform_fan_in(rng, d, (d, d)),
                wv=uniform_fan_in(rng, d, (d, d)),
                wo=uniform_fan_in(rng, d, (d, d)),
                w1=uniform_fan_in(rng, d, (d, 2 * d)),
                w2=uniform_fan_in(rng, 2 * d, (2 * d, d)),
            )
        )

    weights = ToyDiTWeights(
        w_image=w_image,
        w_condition=w_condition,
        w_prompt=w_prompt,
        pos_image=pos_image,
        pos_condition=pos_condition,
        blocks=blocks,
        w_final_mod=uniform_fan_in(rng, 2 * d, (2 * d, 2 * d)),
        w_out=uniform_fan_in(rng, d, (d, c)),
    )
    log.debug("toy DiT initialized seed=%d blocks=%d d_model=%d", config.seed, config.blocks, d)
    return ToyDiT(config, weights)


class ToyDiT(VelocityModel):
    """
    Single-stream joint-attention transformer over [P; X; Y].

    Per block:
      u  = LN(H) * (1 + scale1) + shift1
      H += Attn(u Wq, u Wk, u Wv) Wo
      u2 = LN(H) * (1 + scale2) + shift2
      H += tanh(u2 W1) W2
    Modulation comes from the timestep embedding and is shared by all three streams.
    """

    def __init__(self, config: ModelConfig, weights: ToyDiTWeights):
        self.config = config
        self.weights = weights

    # -------------------------
    # Shared pieces
    # -------------------------
    def _block_modulation(self, temb: np.ndarray, counter: FlopCounter) -> List[np.ndarray]:
        d = self.config.d_model
        mods = []
        for bw in self.weights.blocks:
            m = matmul(temb[None, :], bw.w_mod, counter)[0] + bw.b_mod
            mods.append(m.reshape(4, d))
        return mods

    def _embed_prompt(self, p: PromptEmbedding, counter: FlopCounter) -> np.ndarray:
        if p.tokens.shape[1] != self.config.prompt_dim:
            raise DimensionError(
                f"prompt width {p.tokens.shape[1]} != model prompt_dim {self.config.prompt_dim}"
            )
        return matmul(p.tokens, self.weights.w_prompt, counter)

    def _embed_tokens(self, tokens: np.ndarray, w: np.ndarray, pos: np.ndarray, counter: FlopCounter) -> np.ndarray:
        if tokens.shape[1] != self.config.channels:
            raise DimensionError(f"token width {tokens.shape[1]} != model channels {self.config.channels}")
        counter.add_elementwise(tokens.shape[0] * self.config.d_model)
        return matmul(tokens, w, counter) + pos

    def _mlp(self, h: np.ndarray, mod: np.ndarray, bw: BlockWeights, counter: FlopCounter) -> np.ndarray:
        u = _modulate(_layer_norm(h, counter), mod[2], mod[3], counter)
        hidden = np.tanh(matmul(u, bw.w1, counter))
        counter.add_elementwise(hidden.size + h.size)
        return h + matmul(hidden, bw.w2, counter)

    def _head(self, h_image: np.ndarray, temb: np.ndarray, counter: FlopCounter) -> np.ndarray:
        d = self.config.d_model
        fm = matmul(temb[None, :], self.weights.w_final_mod, counter)[0].reshape(2, d)
        u = _modulate(_layer_norm(h_image, counter), fm[0], fm[1], counter)
        return matmul(u, self.weights.w_out, counter)

    # -------------------------
    # Public interface
    # -------------------------
    def forward_full(
        self,
        x_t: LatentGrid,
        y: ConditionLatent,
        p: PromptEmbedding,
        t: float,
        counter: FlopCounter,
    ) -> tuple[LatentGrid, List[BlockKV]]:
        """Joint attention over every token; returns image velocity and every block's K/V."""
        x_t.require_same_shape(y.grid, "condition")
        n = x_t.num_tokens
        if n != self.config.tokens:
            raise DimensionError(f"{n} image tokens, model built for {self.config.tokens}")
        cfg, wts = self.config, self.weights

        temb = timestep_embedding(t, cfg.d_model)
        mods = self._block_modulation(temb, counter)
        h = np.concatenate(
            [
                self._embed_prompt(p, counter),
                self._embed_tokens(x_t.tokens(), wts.w_image, wts.pos_image, counter),
                self._embed_tokens(y.grid.tokens(), wts.w_condition, wts.pos_condition, counter),
            ],
            axis=0,
        )
        m = p.m
        counter.attention_query_tokens += h.shape[0]

        kv: List[BlockKV] = []
        for b, (bw, mod) in enumerate(zip(wts.blocks, mods)):
            u = _modulate(_layer_norm(h, counter), mod[0], mod[1], counter)
            q = matmul(u, bw.wq, counter)
            k = matmul(u, bw.wk, counter)
            v = matmul(u, bw.wv, counter)
            kv.append(
                BlockKV(
                    block=b,
                    keys={"prompt": k[:m].copy(), "image": k[m:m + n].copy(), "condition": k[m + n:].copy()},
                    values={"prompt": v[:m].copy(), "image": v[m:m + n].copy(), "condition": v[m + n:].copy()},
                )
            )
            attn = attend(q, k, v, cfg.heads, cfg.d_head, counter)
            h = h + matmul(attn, bw.wo, counter)
            counter.add_elementwise(h.size)
            h = self._mlp(h, mod, bw, counter)

        velocity = self._head(h[m:m + n], temb, counter)
        return LatentGrid.from_tokens(velocity, x_t.h, x_t.w), kv

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
        """
        Queries only for [P; A] (plus Y when `condition` is given); keys/values are
        [K_P, K_A, K_R (cached), K_Y (cached unless recomputed)].
        """
        cfg, wts = self.config, self.weights
        if cache is None or len(cache.blocks) != cfg.blocks:
            have = 0 if cache is None else len(cache.blocks)
            raise CacheIncompleteError(f"cache holds {have} blocks, model has {cfg.blocks}")
        active = routing.active
        if x_active.shape[0] != active.size:
            raise DimensionError(f"{x_active.shape[0]} active rows for {active.size} active tokens")

        temb = timestep_embedding(t, cfg.d_model)
        mods = self._block_modulation(temb, counter)
        m = p.m
        a = active.size
        streams = [
            self._embed_prompt(p, counter),
            self._embed_tokens(x_active, wts.w_image, wts.pos_image[active], counter),
        ]
        recompute = condition is not None
        if recompute:
            streams.append(self._embed_tokens(condition.grid.tokens(), wts.w_condition, wts.pos_condition, counter))
        h = np.concatenate(streams, axis=0)
        counter.attention_query_tokens += h.shape[0]

        out = PartialOutput(velocity=np.empty((0, cfg.channels)))
        if recompute:
            out.prompt_kv = []
            out.condition_kv = []

        for b, (bw, mod) in enumerate(zip(wts.blocks, mods)):
            u = _modulate(_layer_norm(h, counter), mod[0], mod[1], counter)
            q = matmul(u, bw.wq, counter)
            if recompute:
                k = matmul(u, bw.wk, counter)
                v = matmul(u, bw.wv, counter)
                k_a, v_a = k[m:m + a], v[m:m + a]
                fresh_prompt = (k[:m], v[:m])
                fresh_condition = (q[m + a:], k[m + a:], v[m + a:])
                out.prompt_kv.append((k[:m].copy(), v[:m].copy()))
                out.condition_kv.append((k[m + a:].copy(), v[m + a:].copy()))
            else:
                u_a = u[m:m + a]
                k_a = matmul(u_a, bw.wk, counter)
                v_a = matmul(u_a, bw.wv, counter)
                fresh_prompt = None
                fresh_condition = None
            out.image_kv.append((k_a.copy(), v_a.copy()))

            q_all, k_full, v_full = assemble_attention_inputs(
                cache,
                b,
                routing,
                q[:m],
                q[m:m + a],
                k_a,
                v_a,
                fresh_prompt=fresh_prompt,
                fresh_condition=fresh_condition,
            )
            attn = attend(q_all, k_full, v_full, cfg.heads, cfg.d_head, counter)
            h = h + matmul(attn, bw.wo, counter)
            counter.add_elementwise(h.size)
            h = self._mlp(h, mod, bw, counter)

        out.velocity = self._head(h[m:m + a], temb, counter)
        return out

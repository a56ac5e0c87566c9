from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Literal, Optional

import numpy as np

from app.decoder.engine import LatentDecoder
from app.errors import ConfigError, ConsistencyError
from app.flow.base import VelocityModel
from app.fusion.cache import (
    AlphaKind,
    ConditionCache,
    FusionConfig,
    FusionMode,
    blend_cache,
    init_cache,
    maybe_reset,
)
from app.models.image import PixelImage
from app.models.latent import ConditionLatent, LatentGrid, PromptEmbedding
from app.models.report import RunReport, StepRecord
from app.models.routing import TokenRouting
from app.sampler.engine import draw_noise, uniform_schedule
from app.selector.engine import SelectorConfig, SelectorMetric, select
from app.tensor.core import FlopCounter

log = logging.getLogger("spot_pipeline")

RoutingOverride = Callable[[int, LatentGrid], TokenRouting]


@dataclass(frozen=True)
class PipelineConfig:
    """
    T: sampler steps; k_init: initial full steps before routing starts
    accelerator_period: every period-th spot model call reuses the latest velocities (None = off)
    routing_override: optional hook (step, x0_hat) -> TokenRouting replacing the selector
    """
    T: int = 50
    k_init: int = 4
    tau: float = 0.2
    reset_interval: float = 10
    mode: FusionMode = "spotfusion"
    alpha: AlphaKind = "cos2"
    metric: SelectorMetric = "lpips-like"
    seed: int = 0
    accelerator_period: Optional[int] = None
    routing_override: Optional[RoutingOverride] = None

    def validate(self) -> None:
        if self.T < 2:
            raise ConfigError(f"T={self.T} must be >= 2")
        if not 1 <= self.k_init < self.T:
            raise ConfigError(f"k_init={self.k_init} must satisfy 1 <= k_init < T={self.T}")
        if not self.reset_interval >= 1:
            raise ConfigError(f"reset_interval={self.reset_interval} must be >= 1")
        if self.accelerator_period is not None and self.accelerator_period < 2:
            raise ConfigError(f"accelerator period={self.accelerator_period} must be >= 2")

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(alpha=self.alpha, reset_interval=self.reset_interval, mode=self.mode)

    @property
    def selector(self) -> SelectorConfig:
        return SelectorConfig(tau=self.tau, metric=self.metric)


def attach_velocity_reuse_accelerator(config: PipelineConfig, period: float) -> PipelineConfig:
    """
    Compose a zeroth-order velocity-reuse accelerator with the active-token subgraph:
    every `period`-th spot model call is replaced by each active token's latest velocity.
    An infinite period is the same as no accelerator.
    """
    if period < 2:
        raise ConfigError(f"accelerator period={period} must be >= 2")
    if math.isinf(period):
        return replace(config, accelerator_period=None)
    return replace(config, accelerator_period=int(period))


@dataclass
class SpotState:
    """Mutable state of one SpotEdit run (token-major arrays)."""
    x: np.ndarray            # (N, c) current latents
    x0_hat: np.ndarray       # (N, c) latest reconstruction per token
    velocity: np.ndarray     # (N, c) latest velocity per token
    cache: Optional[ConditionCache] = None
    step: int = 0
    model_calls: int = 0
    report: Optional[RunReport] = None
    # bookkeeping of the step in progress
    t: float = 1.0
    routing: Optional[TokenRouting] = None
    migrations: int = 0
    alpha: Optional[float] = None
    reset_fired: bool = False


@dataclass
class EditResult:
    final_latent: LatentGrid
    image: PixelImage
    routing_history: List[TokenRouting]
    report: RunReport
    final_routing: TokenRouting
    x0_hat: LatentGrid = field(repr=False, default=None)


def run_edit_skipped_step(state: SpotState) -> SpotState:
    """
    Empty active set: no model call, latents and reconstructions stay as they are.
    Records the step with zero forward FLOPs and every token reused.
    """
    if state.routing is None or state.routing.active.size:
        raise ConsistencyError(f"step {state.step}: skipped step needs an empty active set")
    if state.report is not None:
        state.report.steps.append(
            StepRecord(
                step=state.step,
                t=state.t,
                phase="spot",
                active=0,
                reused=state.routing.num_tokens,
                forward_flops=0,
                attention_query_tokens=0,
                resets_fired=int(state.reset_fired),
                migrations=state.migrations,
                alpha=state.alpha,
            )
        )
    log.debug("spot step=%d skipped (no active tokens) reset=%s", state.step, state.reset_fired)
    return state


def _accelerator_due(config: PipelineConfig, state: SpotState) -> bool:
    period = config.accelerator_period
    return period is not None and (state.model_calls + 1) % period == 0


def run_spotedit(
    model: VelocityModel,
    y: ConditionLatent,
    p: PromptEmbedding,
    config: PipelineConfig,
    decoder: LatentDecoder,
) -> EditResult:
    """
    Initial stage: full forwards on every token, cache filled from the last one.
    Spot stage: route on x0_hat, blend the cache, partial forward and Euler update of
    active tokens only, periodic reset.
    Final: reroute on x0_hat, copy condition latents into the reused tokens, decode.
    """
    config.validate()
    started = time.perf_counter()
    g = y.grid
    h, w, n = g.h, g.w, g.num_tokens
    y_tokens = g.tokens()
    fusion = config.fusion
    ts = uniform_schedule(config.T).times
    counter = FlopCounter()
    report = RunReport(label="spotedit", mode=config.mode, tokens=n, prompt_tokens=p.m)

    x = draw_noise(h, w, g.c, config.seed).tokens().copy()
    state = SpotState(x=x, x0_hat=x.copy(), velocity=np.zeros_like(x), report=report)

    # -------------------------
    # Initial stage
    # -------------------------
    last_kv = None
    first_spot = config.T - config.k_init
    for i in range(config.T, first_spot, -1):
        t, t_prev = float(ts[i]), float(ts[i - 1])
        flops0, q0 = counter.snapshot()
        v, last_kv = model.forward_full(LatentGrid.from_tokens(state.x, h, w), y, p, t, counter)
        vt = v.tokens()
        state.x0_hat = state.x - t * vt
        state.x = state.x - (t - t_prev) * vt
        state.velocity = vt.copy()
        flops1, q1 = counter.snapshot()
        report.steps.append(
            StepRecord(
                step=i, t=t, phase="initial", active=n, reused=0,
                forward_flops=flops1 - flops0, attention_query_tokens=q1 - q0,
            )
        )

    state.cache = init_cache(last_kv, first_spot, n, expected_blocks=model.num_blocks)
    log.info("initial stage done steps=%d cache_step=%d", config.k_init, first_spot)

    # -------------------------
    # Spot stage
    # -------------------------
    history: List[TokenRouting] = []
    prev_reuse = np.zeros(n, dtype=bool)
    selector = config.selector
    recompute_condition = y if config.mode == "no-condition-cache" else None

    for i in range(first_spot, 0, -1):
        t, t_prev = float(ts[i]), float(ts[i - 1])
        state.step = i
        flops0, q0 = counter.snapshot()
        x0_grid = LatentGrid.from_tokens(state.x0_hat, h, w)

        if config.routing_override is not None:
            routing = config.routing_override(i, x0_grid)
        else:
            routing = select(x0_grid, y, decoder, selector)
        routing.validate()
        history.append(routing)
        active, reuse = routing.active, routing.reuse
        migrations = int(prev_reuse[active].sum())
        prev_reuse = np.zeros(n, dtype=bool)
        prev_reuse[reuse] = True

        state.t, state.routing, state.migrations = t, routing, migrations
        state.alpha = fusion.alpha_at(t)
        blend_cache(state.cache, t, routing, fusion)

        full_velocity: list[np.ndarray] = []

        def refresh():
            if active.size == 0:
                return None
            v_full, kv = model.forward_full(LatentGrid.from_tokens(state.x, h, w), y, p, t, counter)
            full_velocity.append(v_full.tokens())
            return kv

        outcome = maybe_reset(state.cache, fusion, refresh, i)
        state.reset_fired = outcome == "refreshed"
        if active.size == 0:
            state = run_edit_skipped_step(state)
            continue

        hits = 0
        reused_before = state.x[reuse].copy()

        if full_velocity:
            vt = full_velocity[0]
            state.x0_hat = state.x - t * vt
            state.velocity = vt.copy()
            v_active = vt[active]
        else:
            if _accelerator_due(config, state):
                v_active = state.velocity[active]
                hits = 1
            else:
                out = model.forward_partial(
                    state.x[active], routing, p, t, state.cache, counter, condition=recompute_condition
                )
                v_active = out.velocity
                for b, (k_a, v_a) in enumerate(out.image_kv):
                    state.cache.store_image(b, active, k_a, v_a)
                if out.condition_kv is not None:
                    for b, ((k_y, v_y), (k_p, v_p)) in enumerate(zip(out.condition_kv, out.prompt_kv)):
                        state.cache.store_condition(b, k_y, v_y)
                        state.cache.store_prompt(b, k_p, v_p)
                state.velocity[active] = v_active
            state.model_calls += 1
            state.x0_hat[active] = state.x[active] - t * v_active

        state.x[active] = state.x[active] - (t - t_prev) * v_active

        if not np.array_equal(state.x[reuse], reused_before):
            raise ConsistencyError(f"step {i}: reused token latents were modified")

        flops1, q1 = counter.snapshot()
        report.steps.append(
            StepRecord(
                step=i,
                t=t,
                phase="spot",
                active=int(active.size),
                reused=int(reuse.size),
                forward_flops=flops1 - flops0,
                attention_query_tokens=q1 - q0,
                resets_fired=int(state.reset_fired),
                accelerator_hits=hits,
                migrations=migrations,
                alpha=state.alpha,
            )
        )
        log.debug(
            "spot step=%d t=%.4f active=%d reuse=%d reset=%s",
            i, t, active.size, reuse.size, outcome,
        )

    # -------------------------
    # Final consolidation
    # -------------------------
    x0_grid = LatentGrid.from_tokens(state.x0_hat, h, w)
    if config.routing_override is not None:
        final_routing = config.routing_override(0, x0_grid)
    else:
        final_routing = select(x0_grid, y, decoder, selector)
    final_routing.validate()

    final = state.x.copy()
    final[final_routing.reuse] = y_tokens[final_routing.reuse]
    final_latent = LatentGrid.from_tokens(final, h, w)
    image = decoder.decode_pixels(final_latent)

    report.wall_clock_seconds = time.perf_counter() - started
    log.info(
        "spotedit done spot_steps=%d flops=%d resets=%d final_reuse=%d",
        len(history), report.total_forward_flops, report.total_resets, final_routing.reuse.size,
    )
    return EditResult(
        final_latent=final_latent,
        image=image,
        routing_history=history,
        report=report,
        final_routing=final_routing,
        x0_hat=x0_grid,
    )

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from app.decoder.engine import LatentDecoder
from app.errors import ConfigError, DomainError
from app.flow.base import VelocityModel
from app.models.image import PixelImage
from app.models.latent import ConditionLatent, LatentGrid, PromptEmbedding
from app.models.report import RunReport, StepRecord
from app.tensor.core import FlopCounter
from app.tensor.rng import SplitMix64

log = logging.getLogger("rf_sampler")


@dataclass(frozen=True, eq=False)
class TimeSchedule:
    """
    Knots t_0 = 0 < t_1 < ... < t_T = 1; times[i] is t_i.

    Sampling walks i = T, T-1, ..., 1 and steps from t_i to t_{i-1}.
    """
    times: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or t.size < 3:
            raise ConfigError(f"schedule needs at least 3 knots, got {t.size}")
        if t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise ConfigError("schedule must increase strictly from t_0=0 to t_T=1")
        object.__setattr__(self, "times", t)

    @property
    def steps(self) -> int:
        return self.times.size - 1


@dataclass
class SamplerState:
    """Latent at knot `step` and the clean-latent estimate from the velocity used to leave it."""
    x_t: LatentGrid
    step: int
    x0_hat: LatentGrid

    def advance(self, v: LatentGrid, schedule: "TimeSchedule") -> None:
        t_i = float(schedule.times[self.step])
        self.x0_hat = reconstruct_x0(self.x_t, v, t_i)
        self.x_t = euler_step(self.x_t, v, t_i, float(schedule.times[self.step - 1]))
        self.step -= 1


def uniform_schedule(T: int) -> TimeSchedule:
    """t_i = i / T."""
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    return TimeSchedule(np.arange(T + 1, dtype=np.float64) / T)


def euler_step(x_t: LatentGrid, v: LatentGrid, t_i: float, t_prev: float) -> LatentGrid:
    """x_{t_prev} = x_{t_i} - (t_i - t_prev) * v."""
    if not t_i > t_prev >= 0.0:
        raise DomainError(f"euler_step needs t_i > t_prev >= 0, got {t_i}, {t_prev}")
    x_t.require_same_shape(v, "velocity")
    return LatentGrid(x_t.data - (t_i - t_prev) * v.data)


def reconstruct_x0(x_t: LatentGrid, v: LatentGrid, t: float) -> LatentGrid:
    """One-step estimate of the clean latent: x_t - t * v."""
    x_t.require_same_shape(v, "velocity")
    return LatentGrid(x_t.data - t * v.data)


def draw_noise(h: int, w: int, c: int, seed: int) -> LatentGrid:
    """X_1 ~ N(0, I), Box-Muller over a splitmix64 stream."""
    return LatentGrid(SplitMix64(seed).normal((h, w, c)))


@dataclass
class BaselineResult:
    final: LatentGrid
    image: PixelImage
    report: RunReport
    state: SamplerState


def run_baseline(
    model: VelocityModel,
    y: ConditionLatent,
    p: PromptEmbedding,
    schedule: TimeSchedule,
    seed: int,
    decoder: LatentDecoder,
) -> BaselineResult:
    """Full-token Euler integration from seeded noise at t=1 down to t=0."""
    started = time.perf_counter()
    g = y.grid
    x = draw_noise(g.h, g.w, g.c, seed)
    state = SamplerState(x_t=x, step=schedule.steps, x0_hat=x)
    counter = FlopCounter()
    report = RunReport(label="baseline", mode="full", tokens=g.num_tokens, prompt_tokens=p.m)

    ts = schedule.times
    for i in range(schedule.steps, 0, -1):
        flops0, queries0 = counter.snapshot()
        v, _ = model.forward_full(state.x_t, y, p, float(ts[i]), counter)
        state.advance(v, schedule)
        flops1, queries1 = counter.snapshot()
        report.steps.append(
            StepRecord(
                step=i,
                t=float(ts[i]),
                phase="baseline",
                active=g.num_tokens,
                reused=0,
                forward_flops=flops1 - flops0,
                attention_query_tokens=queries1 - queries0,
            )
        )
        log.debug("baseline step=%d t=%.4f flops=%d", i, ts[i], flops1 - flops0)

    x = state.x_t
    image = decoder.decode_pixels(x)
    report.wall_clock_seconds = time.perf_counter() - started
    log.info("baseline done steps=%d flops=%d", schedule.steps, report.total_forward_flops)
    return BaselineResult(final=x, image=image, report=report, state=state)

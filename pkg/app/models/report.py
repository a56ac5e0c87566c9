from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, computed_field

REPORT_SCHEMA = "spotflow-report/1"


class StepRecord(BaseModel):
    """
    One sampler step.

    phase:
      - baseline: full-token reference run
      - initial: SpotEdit initial-stage full step
      - spot: SpotEdit step with routing (partial, skipped or reset)
    active/reused: |A| and |R| (baseline and initial steps report every token active)
    forward_flops: model FLOPs spent in this step (matmul + softmax + elementwise)
    alpha: fusion weight applied to the cache this step (spot steps only)
    """

    step: int
    t: float
    phase: Literal["baseline", "initial", "spot"]
    active: int
    reused: int
    forward_flops: int
    attention_query_tokens: int
    resets_fired: int = 0
    accelerator_hits: int = 0
    migrations: int = 0
    alpha: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None


class RunReport(BaseModel):
    schema_version: str = REPORT_SCHEMA
    label: str
    mode: str
    tokens: int
    prompt_tokens: int
    steps: List[StepRecord] = []
    wall_clock_seconds: float = 0.0

    @computed_field
    @property
    def total_forward_flops(self) -> int:
        return sum(s.forward_flops for s in self.steps)

    @computed_field
    @property
    def total_attention_query_tokens(self) -> int:
        return sum(s.attention_query_tokens for s in self.steps)

    @computed_field
    @property
    def total_resets(self) -> int:
        return sum(s.resets_fired for s in self.steps)

    @computed_field
    @property
    def total_accelerator_hits(self) -> int:
        return sum(s.accelerator_hits for s in self.steps)

    @computed_field
    @property
    def total_migrations(self) -> int:
        return sum(s.migrations for s in self.steps)

    @computed_field
    @property
    def spot_steps(self) -> int:
        return sum(1 for s in self.steps if s.phase == "spot")

    def mean_reused(self) -> float:
        spot = [s.reused for s in self.steps if s.phase == "spot"]
        return float(sum(spot) / len(spot)) if spot else 0.0


class QualityScores(BaseModel):
    """psnr in dB (99 cap for identical images); region_psnr over the non-edited region."""

    psnr: float
    ssim: float
    region_psnr: Optional[float] = None


class SpeedupResult(BaseModel):
    """Baseline cost / method cost. infinite=True when the method spent zero FLOPs."""

    flop_ratio: float
    wall_clock_ratio: Optional[float] = None
    infinite: bool = False

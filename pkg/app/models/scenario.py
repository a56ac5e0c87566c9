from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

SCENARIO_SCHEMA = "spotflow-scenario/1"


class _Strict(BaseModel):
    # Unknown keys are rejected so ablation configs cannot silently typo.
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class GridSpec(_Strict):
    h: int = Field(16, ge=1)
    w: int = Field(16, ge=1)
    c: int = Field(8, ge=1)


class ModelSpec(_Strict):
    kind: Literal["analytic", "toy-dit"] = "toy-dit"
    blocks: int = Field(4, ge=1)
    heads: int = Field(4, ge=1)
    d_model: int = Field(64, ge=1)
    seed: int = Field(0, ge=0)
    positional: bool = True

    @model_validator(mode="after")
    def _heads_divide(self) -> "ModelSpec":
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        return self


class ScheduleSpec(_Strict):
    T: int = Field(50, ge=2)
    k_init: int = Field(4, ge=1, alias="K_init")

    @model_validator(mode="after")
    def _kinit_below_t(self) -> "ScheduleSpec":
        if self.k_init >= self.T:
            raise ValueError(f"K_init={self.k_init} must be < T={self.T}")
        return self


class SelectorSpec(_Strict):
    tau: float = 0.2
    metric: Literal["lpips-like", "raw-l2"] = "lpips-like"


class FusionSpec(_Strict):
    mode: Literal["spotfusion", "static", "naive-skip", "no-condition-cache"] = "spotfusion"
    # null disables the reset mechanism
    reset_interval: Optional[int] = Field(10, ge=1)
    alpha: Literal["cos2", "linear"] = "cos2"


class Rectangle(_Strict):
    """Token-coordinate rectangle [top, top+height) x [left, left+width)."""
    top: int = Field(ge=0)
    left: int = Field(ge=0)
    height: int = Field(ge=1)
    width: int = Field(ge=1)


class EditSpec(_Strict):
    mask: List[Rectangle] = Field(default_factory=list)
    delta_magnitude: float = 1.0
    delta_seed: int = Field(0, ge=0)


class PromptSpec(_Strict):
    m: int = Field(8, ge=1)
    seed: int = Field(0, ge=0)


class AcceleratorSpec(_Strict):
    kind: Literal["none", "velocity-reuse"] = "none"
    period: Optional[int] = Field(None, ge=2)

    @model_validator(mode="after")
    def _period_required(self) -> "AcceleratorSpec":
        if self.kind == "velocity-reuse" and self.period is None:
            raise ValueError("velocity-reuse accelerator needs a period >= 2")
        return self


class DecoderSpec(_Strict):
    seed: int = Field(7, ge=0)
    patch: int = Field(8, ge=1)
    layer_channels: List[int] = Field(default_factory=lambda: [16, 16], min_length=1)


class Scenario(_Strict):
    schema_: Literal["spotflow-scenario/1"] = Field(alias="schema")
    name: str = "scenario"
    seed: int = Field(0, ge=0)
    condition_seed: int = Field(1, ge=0)
    grid: GridSpec = Field(default_factory=GridSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    selector: SelectorSpec = Field(default_factory=SelectorSpec)
    fusion: FusionSpec = Field(default_factory=FusionSpec)
    edit: EditSpec = Field(default_factory=EditSpec)
    prompt: PromptSpec = Field(default_factory=PromptSpec)
    accelerator: AcceleratorSpec = Field(default_factory=AcceleratorSpec)
    decoder: DecoderSpec = Field(default_factory=DecoderSpec)

    @model_validator(mode="after")
    def _check_layout(self) -> "Scenario":
        g = self.grid
        for idx, r in enumerate(self.edit.mask):
            if r.top + r.height > g.h or r.left + r.width > g.w:
                raise ValueError(
                    f"edit.mask[{idx}] (top={r.top}, left={r.left}, height={r.height}, "
                    f"width={r.width}) exceeds the {g.h}x{g.w} token grid"
                )
        p = self.decoder.patch
        if (g.h * p) % 8 or (g.w * p) % 8:
            raise ValueError(f"decoder.patch={p}: image {g.h * p}x{g.w * p} must be divisible by 8")
        return self

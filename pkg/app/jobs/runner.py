from __future__ import annotations

import asyncio
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from app.config import get_settings
from app.decoder.engine import LatentDecoder
from app.decoder.netpbm import write_pgm, write_ppm, write_scores_csv
from app.errors import ConfigError, SpotflowError
from app.flow.loader import get_model
from app.metrics.engine import (
    psnr,
    region_psnr,
    selector_precision_recall,
    speedup_ratio,
    ssim,
)
from app.metrics.report import write_report
from app.models.latent import ConditionLatent, LatentGrid, ModelConfig, PromptEmbedding
from app.models.report import QualityScores
from app.models.scenario import Scenario
from app.pipeline.engine import (
    EditResult,
    PipelineConfig,
    attach_velocity_reuse_accelerator,
    run_spotedit,
)
from app.sampler.engine import BaselineResult, run_baseline, uniform_schedule
from app.tensor.rng import SplitMix64, derive_seed

log = logging.getLogger("spot_runner")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SWEEP_PARAMS = ("tau", "reset_interval", "kinit")
CONDITION_WAVES = 4


@dataclass
class ScenarioInputs:
    y: ConditionLatent
    target: LatentGrid
    prompt: PromptEmbedding
    edited: np.ndarray  # (h, w) bool token mask
    decoder: LatentDecoder
    model_config: ModelConfig


@dataclass
class Comparison:
    baseline: BaselineResult
    spot: EditResult
    quality: QualityScores
    speedup: float
    speedup_infinite: bool
    wall_clock_ratio: Optional[float]
    condition_region_psnr: float


# -------------------------
# Scenario loading and input synthesis
# -------------------------
def load_scenario(path: str | Path) -> Scenario:
    raw = Path(path).read_text(encoding="utf-8")
    return Scenario.model_validate(json.loads(raw))


def smooth_condition(h: int, w: int, c: int, seed: int) -> LatentGrid:
    """Sum of 4 seeded low-frequency sinusoids per channel."""
    rng = SplitMix64(seed)
    rows = np.arange(h, dtype=np.float64)[:, None] / h
    cols = np.arange(w, dtype=np.float64)[None, :] / w
    data = np.zeros((h, w, c))
    for ch in range(c):
        amp = rng.uniform((CONDITION_WAVES,), 0.1, 0.25)
        fy = rng.uniform((CONDITION_WAVES,), 0.5, 2.0)
        fx = rng.uniform((CONDITION_WAVES,), 0.5, 2.0)
        phase = rng.uniform((CONDITION_WAVES,), 0.0, 2.0 * math.pi)
        for k in range(CONDITION_WAVES):
            data[:, :, ch] += amp[k] * np.sin(2.0 * math.pi * (fy[k] * rows + fx[k] * cols) + phase[k])
    return LatentGrid(data)


def edit_mask(scenario: Scenario) -> np.ndarray:
    g = scenario.grid
    mask = np.zeros((g.h, g.w), dtype=bool)
    for r in scenario.edit.mask:
        mask[r.top:r.top + r.height, r.left:r.left + r.width] = True
    return mask


def build_inputs(scenario: Scenario) -> ScenarioInputs:
    g, ms = scenario.grid, scenario.model
    y = smooth_condition(g.h, g.w, g.c, scenario.condition_seed)
    edited = edit_mask(scenario)
    delta = scenario.edit.delta_magnitude * SplitMix64(scenario.edit.delta_seed).normal((g.h, g.w, g.c))
    target = LatentGrid(y.data + delta * edited[:, :, None])

    model_config = ModelConfig(
        kind=ms.kind,
        blocks=ms.blocks if ms.kind == "toy-dit" else 0,
        heads=ms.heads,
        d_model=ms.d_model,
        d_head=ms.d_model // ms.heads,
        seed=ms.seed,
        channels=g.c,
        tokens=g.h * g.w,
        prompt_dim=ms.d_model,
        positional=ms.positional,
    )
    prompt = PromptEmbedding(
        SplitMix64(derive_seed(scenario.prompt.seed, 1)).normal((scenario.prompt.m, ms.d_model))
    )
    decoder = LatentDecoder(
        channels=g.c,
        layer_channels=tuple(scenario.decoder.layer_channels),
        patch=scenario.decoder.patch,
        seed=scenario.decoder.seed,
    )
    return ScenarioInputs(
        y=ConditionLatent(y),
        target=target,
        prompt=prompt,
        edited=edited,
        decoder=decoder,
        model_config=model_config,
    )


def pipeline_config(scenario: Scenario) -> PipelineConfig:
    interval = scenario.fusion.reset_interval
    config = PipelineConfig(
        T=scenario.schedule.T,
        k_init=scenario.schedule.k_init,
        tau=scenario.selector.tau,
        reset_interval=math.inf if interval is None else interval,
        mode=scenario.fusion.mode,
        alpha=scenario.fusion.alpha,
        metric=scenario.selector.metric,
        seed=scenario.seed,
    )
    if scenario.accelerator.kind == "velocity-reuse":
        config = attach_velocity_reuse_accelerator(config, scenario.accelerator.period)
    return config


# -------------------------
# Execution (no file output)
# -------------------------
def execute_run(scenario: Scenario) -> tuple[EditResult, ScenarioInputs]:
    inputs = build_inputs(scenario)
    model = get_model(inputs.model_config, target=inputs.target)
    result = run_spotedit(model, inputs.y, inputs.prompt, pipeline_config(scenario), inputs.decoder)
    if scenario.edit.mask:
        spot_steps = [s for s in result.report.steps if s.phase == "spot"]
        for record, routing in zip(spot_steps, result.routing_history):
            record.precision, record.recall = selector_precision_recall(routing, inputs.edited)
    return result, inputs


def execute_compare(scenario: Scenario) -> tuple[Comparison, ScenarioInputs]:
    spot, inputs = execute_run(scenario)
    model = get_model(inputs.model_config, target=inputs.target)
    baseline = run_baseline(
        model,
        inputs.y,
        inputs.prompt,
        uniform_schedule(scenario.schedule.T),
        scenario.seed,
        inputs.decoder,
    )
    condition_image = inputs.decoder.decode_pixels(inputs.y.grid)
    quality = QualityScores(
        psnr=psnr(spot.image, baseline.image),
        ssim=ssim(spot.image, baseline.image),
        region_psnr=region_psnr(spot.image, baseline.image, inputs.edited),
    )
    speed = speedup_ratio(baseline.report, spot.report)
    comparison = Comparison(
        baseline=baseline,
        spot=spot,
        quality=quality,
        speedup=speed.flop_ratio,
        speedup_infinite=speed.infinite,
        wall_clock_ratio=speed.wall_clock_ratio,
        condition_region_psnr=region_psnr(spot.image, condition_image, inputs.edited),
    )
    log.info(
        "compare done speedup=%.4f psnr=%.3f ssim=%.4f",
        speed.flop_ratio, quality.psnr, quality.ssim,
    )
    return comparison, inputs


# -------------------------
# Artifact writers
# -------------------------
def _write_run_artifacts(result: EditResult, inputs: ScenarioInputs, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_report(result.report, None, out / "spotedit_report.json")
    write_ppm(result.image, out / "spotedit.ppm")
    h, w = inputs.edited.shape
    masks = out / "masks"
    masks.mkdir(exist_ok=True)
    for routing, record in zip(result.routing_history, [s for s in result.report.steps if s.phase == "spot"]):
        write_pgm(routing.indicator.reshape(h, w) == 0, masks / f"active_step{record.step:03d}.pgm")
        if routing.scores is not None:
            write_pgm(routing.scores.grid, masks / f"score_step{record.step:03d}.pgm")
    if result.final_routing.scores is not None:
        write_scores_csv(result.final_routing.scores.scores, w, out / "final_scores.csv")


def _comparison_extra(c: Comparison) -> Dict[str, Any]:
    return {
        "speedup_flops": c.speedup,
        "speedup_infinite": c.speedup_infinite,
        "wall_clock_ratio": c.wall_clock_ratio,
        "condition_region_psnr": c.condition_region_psnr,
        "mean_reused": c.spot.report.mean_reused(),
    }


# -------------------------
# Commands
# -------------------------
def _guarded(label: str, fn: Callable[[], None]) -> int:
    try:
        fn()
    except (ValidationError, ConfigError, json.JSONDecodeError) as e:
        print(f"{label}: invalid scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpotflowError, OSError) as e:
        print(f"{label}: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _load(scenario_path: str | Path, seed_override: Optional[int]) -> Scenario:
    scenario = load_scenario(scenario_path)
    if seed_override is not None:
        scenario = scenario.model_copy(update={"seed": seed_override})
    return scenario


def cmd_run(scenario_path: str | Path, out_dir: str | Path, seed_override: Optional[int] = None) -> int:
    def body() -> None:
        scenario = _load(scenario_path, seed_override)
        result, inputs = execute_run(scenario)
        _write_run_artifacts(result, inputs, Path(out_dir))
        log.info("run written out=%s", out_dir)

    return _guarded("run", body)


def _write_compare(c: Comparison, inputs: ScenarioInputs, out: Path) -> None:
    _write_run_artifacts(c.spot, inputs, out)
    write_report(c.baseline.report, None, out / "baseline_report.json")
    write_report(c.spot.report, c.quality, out / "spotedit_report.json", extra=_comparison_extra(c))
    write_ppm(c.baseline.image, out / "baseline.ppm")


def cmd_compare(scenario_path: str | Path, out_dir: str | Path, seed_override: Optional[int] = None) -> int:
    def body() -> None:
        scenario = _load(scenario_path, seed_override)
        comparison, inputs = execute_compare(scenario)
        _write_compare(comparison, inputs, Path(out_dir))

    return _guarded("compare", body)


def parse_sweep_value(param: str, raw: str, index: int = 0) -> Any:
    """'inf', '-inf' for tau; 'disabled'/'none' (or inf) for reset_interval."""
    text = raw.strip().lower()
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter '{param}', expected one of {SWEEP_PARAMS}")
    try:
        if param == "tau":
            return float(text)
        if param == "reset_interval" and text in ("disabled", "none", "inf"):
            return None
        return int(text)
    except ValueError:
        raise ConfigError(f"--values[{index}]={raw!r} is not a valid {param}") from None


def _apply_sweep(scenario: Scenario, param: str, value: Any) -> Scenario:
    data = scenario.model_dump(by_alias=True)
    if param == "tau":
        data["selector"]["tau"] = value
    elif param == "reset_interval":
        data["fusion"]["reset_interval"] = value
    else:
        data["schedule"]["K_init"] = value
    return Scenario.model_validate(data)


def cmd_sweep(
    scenario_path: str | Path,
    param: str,
    values: List[str],
    out_dir: str | Path,
    seed_override: Optional[int] = None,
) -> int:
    """One compare run per value, plus sweep.csv of (value, speedup, psnr, ssim, mean_reused)."""

    def body() -> None:
        if param not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter '{param}', expected one of {SWEEP_PARAMS}")
        if len(values) < 2:
            raise ConfigError(f"sweep needs at least 2 values, got {len(values)}")
        base = _load(scenario_path, seed_override)
        parsed = [parse_sweep_value(param, v, i) for i, v in enumerate(values)]
        scenarios = [_apply_sweep(base, param, v) for v in parsed]
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

        rows = asyncio.run(_sweep_all(scenarios, values, out))
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["value", "speedup", "psnr", "ssim", "mean_reused"])
            writer.writerows(rows)
        log.info("sweep written param=%s values=%d out=%s", param, len(values), out)

    return _guarded("sweep", body)


async def _sweep_all(scenarios: List[Scenario], labels: List[str], out: Path) -> List[list]:
    settings = get_settings()
    gate = asyncio.Semaphore(settings.threads)

    def one(scenario: Scenario, label: str) -> list:
        comparison, inputs = execute_compare(scenario)
        _write_compare(comparison, inputs, out / f"value_{label}")
        return [
            label,
            "inf" if comparison.speedup_infinite else f"{comparison.speedup:.9g}",
            f"{comparison.quality.psnr:.9g}",
            f"{comparison.quality.ssim:.9g}",
            f"{comparison.spot.report.mean_reused():.9g}",
        ]

    async def guarded(scenario: Scenario, label: str) -> list:
        async with gate:
            try:
                return await asyncio.to_thread(one, scenario, label)
            except SpotflowError as e:
                log.error("sweep member failed value=%s err=%s", label, e)
                raise

    return list(await asyncio.gather(*(guarded(s, l) for s, l in zip(scenarios, labels))))

# app/api/routes.py
from __future__ import annotations

import logging
from typing import Any, Dict

from fastapi import APIRouter, HTTPException

from app.errors import ConfigError, SpotflowError
from app.jobs.runner import execute_compare, execute_run
from app.metrics.report import mask_wall_clock, report_document
from app.models.scenario import Scenario

router = APIRouter()
log = logging.getLogger("spot_api")


def _run_payload(result, with_scores: bool) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "active_final": [int(i) for i in result.final_routing.active],
        "reused_final": [int(i) for i in result.final_routing.reuse],
    }
    if with_scores and result.final_routing.scores is not None:
        payload["final_scores"] = [float(s) for s in result.final_routing.scores.scores]
    return payload


@router.post("/run")
def run(scenario: Scenario, include_scores: bool = False):
    """Spot-edit run; returns the report document plus the final routing."""
    try:
        result, _ = execute_run(scenario)
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except SpotflowError as e:
        log.warning("run failed name=%s err=%s", scenario.name, e)
        raise HTTPException(status_code=500, detail=str(e))

    doc = report_document(result.report)
    doc["routing"] = _run_payload(result, include_scores)
    return doc


@router.post("/compare")
def compare(scenario: Scenario, deterministic: bool = False):
    """
    Baseline vs spot-edit on one scenario.

    deterministic=true masks wall-clock fields so identical scenarios produce
    identical bodies.
    """
    try:
        comparison, _ = execute_compare(scenario)
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except SpotflowError as e:
        log.warning("compare failed name=%s err=%s", scenario.name, e)
        raise HTTPException(status_code=500, detail=str(e))

    body = {
        "baseline": report_document(comparison.baseline.report),
        "spotedit": report_document(
            comparison.spot.report,
            comparison.quality,
            extra={
                "speedup_flops": comparison.speedup,
                "speedup_infinite": comparison.speedup_infinite,
                "wall_clock_ratio": comparison.wall_clock_ratio,
                "condition_region_psnr": comparison.condition_region_psnr,
            },
        ),
    }
    return mask_wall_clock(body) if deterministic else body

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Optional

from app.errors import ReportIOError
from app.models.report import REPORT_SCHEMA, QualityScores, RunReport, StepRecord

SIGNIFICANT_DIGITS = 9
WALL_CLOCK_KEYS = ("wall_clock_seconds", "wall_clock_ratio")


def _round_reals(value: Any) -> Any:
    """Integers stay integers; reals keep 9 significant digits; non-finite reals become strings."""
    if isinstance(value, bool) or isinstance(value, int) or value is None or isinstance(value, str):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(value, dict):
        return {k: _round_reals(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_reals(v) for v in value]
    return value


def report_document(
    report: RunReport,
    scores: Optional[QualityScores] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    return _round_reals(
        {
            "schema": REPORT_SCHEMA,
            "run": report.model_dump(),
            "quality": scores.model_dump() if scores is not None else None,
            "extra": extra or {},
        }
    )


def write_report(
    report: RunReport,
    scores: Optional[QualityScores],
    path: str | Path,
    extra: Optional[Dict[str, Any]] = None,
    write_csv: bool = True,
) -> Path:
    """
    Single JSON document (schema spotflow-report/1) plus an optional per-step CSV
    next to it (same stem, .csv).
    """
    path = Path(path)
    doc = report_document(report, scores, extra)
    try:
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        if write_csv:
            write_steps_csv(report, path.with_suffix(".csv"))
    except OSError as e:
        raise ReportIOError(f"cannot write report {path}: {e}") from e
    return path


def write_steps_csv(report: RunReport, path: str | Path) -> None:
    fields = list(StepRecord.model_fields)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for step in report.steps:
            writer.writerow(_round_reals(step.model_dump()))


def read_report(path: str | Path) -> tuple[RunReport, Optional[QualityScores], Dict[str, Any]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ReportIOError(f"cannot read report {path}: {e}") from e
    if doc.get("schema") != REPORT_SCHEMA:
        raise ReportIOError(f"{path}: unsupported schema {doc.get('schema')!r}")
    quality = doc.get("quality")
    return (
        RunReport.model_validate(doc["run"]),
        QualityScores.model_validate(quality) if quality is not None else None,
        doc.get("extra", {}),
    )


def mask_wall_clock(doc: Any) -> Any:
    """Copy of a report document with every wall-clock field blanked (for determinism checks)."""
    if isinstance(doc, dict):
        return {k: (None if k in WALL_CLOCK_KEYS else mask_wall_clock(v)) for k, v in doc.items()}
    if isinstance(doc, list):
        return [mask_wall_clock(v) for v in doc]
    return doc

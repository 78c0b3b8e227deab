"""Merge per-seed evaluation reports into mean ± std rows."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError

METRIC_LABELS = {"macro_auroc": "AUROC", "macro_f1": "F1", "mae": "MAE(R)"}


def load_report(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"report not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid report ({exc.msg})") from None


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise DataError("need at least two seeds to aggregate")
    return float(v.mean()), float(v.std(ddof=1))


def format_pm(mean: float, std: float, digits: int = 2) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def metrics_of(report: dict) -> list[str]:
    return [k for k in METRIC_LABELS if k in report]


def aggregate(reports: list[dict], digits: int = 2) -> dict[str, str]:
    """``{metric: "m ± s"}`` over reports that share a task."""
    if len(reports) < 2:
        raise DataError("need at least two seed reports")
    tasks = {r.get("task") for r in reports}
    if len(tasks) != 1:
        raise DataError(f"reports mix tasks: {sorted(map(str, tasks))}")
    out = {}
    for key in metrics_of(reports[0]):
        out[key] = format_pm(*mean_std([r[key] for r in reports]), digits)
    return out


def table(groups: dict[str, list[dict]], digits: int = 2) -> str:
    """One row per model: ``| model | AUROC | F1 |`` or ``| model | MAE(R) |``."""
    if not groups:
        raise DataError("nothing to aggregate")
    rows = {name: aggregate(reps, digits) for name, reps in groups.items()}
    keys = list(next(iter(rows.values())))
    lines = ["| Model | " + " | ".join(METRIC_LABELS[k] for k in keys) + " |", "|---" * (len(keys) + 1) + "|"]
    for name, row in rows.items():
        lines.append(f"| {name} | " + " | ".join(row[k] for k in keys) + " |")
    return "\n".join(lines) + "\n"


def per_code_means(reports: list[dict], metric: str = "f1") -> dict[str, float]:
    """Mean of a per-code metric across seeds; undefined entries are skipped."""
    sums: dict[str, list[float]] = {}
    for r in reports:
        for row in r.get("per_code", []):
            v = row.get(metric)
            if v is not None and not (isinstance(v, float) and math.isnan(v)):
                sums.setdefault(row["code"], []).append(float(v))
    return {c: float(np.mean(v)) for c, v in sums.items()}


def top_codes_by_f1(reports: list[dict], n: int = 10) -> list[str]:
    """Codes with the highest mean F1 across seeds; ties break on the code."""
    means = per_code_means(reports, "f1")
    return [c for c, _ in sorted(means.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]

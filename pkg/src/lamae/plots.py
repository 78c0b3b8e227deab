"""Standalone SVG figures, each written next to a CSV with the plotted numbers."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .optim import ScheduleConfig, lr_at  # noqa: E402

plt.rcParams["svg.hashsalt"] = "lamae"


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def loss_curve(records: list[dict], out_dir: str | Path, name: str = "loss") -> tuple[Path, Path]:
    """Per-epoch loss for each split present in a metrics log (empty log gives empty axes)."""
    out = Path(out_dir)
    rows = [[r["epoch"], r["split"], r["loss"]] for r in records if r.get("loss") not in ("", None)]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for split in sorted({r[1] for r in rows}):
        pts = [(int(e), float(v)) for e, s, v in rows if s == split]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=split)
    if rows:
        ax.legend()
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    return _save(fig, out / f"{name}.svg"), _write_csv(out / f"{name}.csv", ["epoch", "split", "loss"], rows)


def lr_samples(schedule: ScheduleConfig, n_points: int = 100) -> tuple[np.ndarray, np.ndarray]:
    epochs = np.linspace(0.0, schedule.total_epochs, n_points)
    return epochs, np.array([lr_at(float(e), schedule) for e in epochs])


def lr_curve(schedule: ScheduleConfig, out_dir: str | Path, n_points: int = 100) -> tuple[Path, Path]:
    out = Path(out_dir)
    epochs, lrs = lr_samples(schedule, n_points)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, lrs)
    ax.set_xlabel("epoch")
    ax.set_ylabel("learning rate")
    rows = [[repr(float(e)), repr(float(v))] for e, v in zip(epochs, lrs)]
    return _save(fig, out / "lr.svg"), _write_csv(out / "lr.csv", ["epoch", "lr"], rows)


def code_bars(
    codes: list[str], values: list[float], out_dir: str | Path, metric: str, name: str | None = None
) -> tuple[Path, Path]:
    """Bar chart in the given order (callers pass the report's ordering)."""
    out = Path(out_dir)
    name = name or f"per_code_{metric}"
    fig, ax = plt.subplots(figsize=(max(4, 0.45 * len(codes) + 1), 3.5))
    ax.bar(range(len(codes)), values)
    ax.set_xticks(range(len(codes)))
    ax.set_xticklabels(codes, rotation=60)
    ax.set_ylabel(metric)
    rows = [[c, repr(float(v))] for c, v in zip(codes, values)]
    return _save(fig, out / f"{name}.svg"), _write_csv(out / f"{name}.csv", ["code", metric], rows)


def report_bars(report: dict, out_dir: str | Path, top: list[str] | None = None) -> list[Path]:
    """AUROC and F1 bars for the report's codes (or the ``top`` subset, in that order)."""
    per = {r["code"]: r for r in report.get("per_code", [])}
    codes = top if top is not None else [r["code"] for r in report.get("per_code", [])]
    paths = []
    for metric in ("auroc", "f1"):
        vals = [np.nan if per[c][metric] is None else per[c][metric] for c in codes]
        paths.extend(code_bars(codes, vals, out_dir, metric))
    return paths

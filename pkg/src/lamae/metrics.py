"""Per-code AUROC and F1, macro averaging, regression MAE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


def _column(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DataError(f"scores {s.shape} and labels {y.shape} differ in length")
    if s.size == 0:
        raise DataError("empty column")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return s, y.astype(bool)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def f1_score(scores, labels, threshold: float = 0.5, from_logits: bool = True) -> float:
    """2TP / (2TP + FP + FN), with 0 for an empty denominator."""
    s, y = _column(scores, labels)
    prob = sigmoid(s) if from_logits else s
    pred = prob >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate P(s+ > s-) + P(s+ == s-)/2; nan for a single-class column."""
    s, y = _column(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)  # average ranks resolve ties as half-wins
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class MacroResult:
    value: float
    n_valid: int
    excluded: tuple[int, ...] = ()


def macro_average(values, valid=None) -> MacroResult:
    """Unweighted mean over valid codes; nan entries are excluded and reported."""
    v = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(v) if valid is None else (np.asarray(valid, dtype=bool) & ~np.isnan(v))
    if not ok.any():
        raise DataError("no valid codes to average")
    return MacroResult(float(np.mean(v[ok])), int(ok.sum()), tuple(int(i) for i in np.flatnonzero(~ok)))


def mae_regression(pred, target) -> float:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise DataError(f"{p.size} predictions for {t.size} targets")
    if p.size == 0:
        raise DataError("empty regression batch")
    return float(np.mean(np.abs(p - t)))


@dataclass
class MultilabelReport:
    codes: list[str]
    auroc: np.ndarray
    f1: np.ndarray
    macro_auroc: MacroResult
    macro_f1: MacroResult
    extra: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {"code": c, "auroc": float(a), "f1": float(f)} for c, a, f in zip(self.codes, self.auroc, self.f1)
        ]

    def top_by_f1(self, n: int = 10) -> list[str]:
        order = sorted(range(len(self.codes)), key=lambda i: (-self.f1[i], self.codes[i]))
        return [self.codes[i] for i in order[:n]]


def multilabel_report(scores, labels, codes: list[str], threshold: float = 0.5) -> MultilabelReport:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 2:
        raise DataError(f"scores {s.shape} and labels {y.shape} must be matching N x K matrices")
    if len(codes) != s.shape[1]:
        raise DataError(f"{len(codes)} code names for {s.shape[1]} columns")
    au = np.array([auroc(s[:, k], y[:, k]) for k in range(s.shape[1])])
    f1 = np.array([f1_score(s[:, k], y[:, k], threshold) for k in range(s.shape[1])])
    # F1 is defined everywhere, so exclusions follow AUROC to keep both macros on the same codes.
    valid = ~np.isnan(au)
    return MultilabelReport(list(codes), au, f1, macro_average(au), macro_average(f1, valid))

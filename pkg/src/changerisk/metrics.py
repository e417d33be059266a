"""Priority-weighted evaluation: confusion matrices, precision, weighted
recall, weighted F-beta, AUC, and exhaustive threshold search.

Weighted recall averages per-class recall by true-instance mass; weighted
F-beta mass-averages the per-class F-beta with beta=2 by default, putting
more emphasis on recall. All confusion entries accumulate sample weights,
not counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_PRIORITY_WEIGHTS = {"P0_major": 5.0, "P1": 5.0, "P2": 3.0, None: 1.0}


@dataclass
class MetricConfig:
    beta: float = 2.0
    priority_weights: dict = field(default_factory=lambda: dict(DEFAULT_PRIORITY_WEIGHTS))
    # zero-division policy: a 0/0 class term contributes 0 and sets a flag
    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if any(w <= 0 for w in self.priority_weights.values()):
            raise ValueError("priority weights must be positive")


@dataclass
class WeightedConfusion:
    """Binary confusion with weighted masses; positive-class orientation.

    Negative-class entries follow by complementarity: TP_neg = tn,
    FP_neg = fn, FN_neg = fp, TN_neg = tp.
    """

    tp: float
    fp: float
    fn: float
    tn: float

    @property
    def n_positive(self) -> float:
        return self.tp + self.fn

    @property
    def n_negative(self) -> float:
        return self.tn + self.fp

    @property
    def total(self) -> float:
        return self.n_positive + self.n_negative

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion(
    scores: Sequence[int] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    weights: Sequence[float] | np.ndarray,
    threshold: int,
) -> WeightedConfusion:
    """Weighted confusion at `threshold`; predicted positive iff score >= threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    w = np.asarray(weights, dtype=float)
    if not (len(s) == len(y) == len(w)):
        raise ValueError("scores, labels, weights must have equal length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    pred = s >= threshold
    pos = y == 1
    return WeightedConfusion(
        tp=float(w[pred & pos].sum()),
        fp=float(w[pred & ~pos].sum()),
        fn=float(w[~pred & pos].sum()),
        tn=float(w[~pred & ~pos].sum()),
    )


def _per_class(conf: WeightedConfusion):
    """(mass, TP, FP, FN) per class: positive then negative."""
    return (
        (conf.n_positive, conf.tp, conf.fp, conf.fn),
        (conf.n_negative, conf.tn, conf.fn, conf.fp),
    )


def weighted_recall(conf: WeightedConfusion) -> float:
    """Per-class recall averaged by true-instance mass; empty classes are
    skipped and the total mass renormalized."""
    total = conf.total
    if total == 0:
        raise ValueError("empty confusion")
    present = [(n, tp, fn) for n, tp, _, fn in _per_class(conf) if n > 0]
    norm = sum(n for n, _, _ in present)
    return sum((n / norm) * (tp / (tp + fn)) for n, tp, fn in present)


def _fbeta_term(p: float, r: float, beta: float) -> float:
    b2 = beta * beta
    denom = b2 * p + r
    if denom == 0:
        return 0.0
    return (1 + b2) * p * r / denom


def weighted_fbeta(conf: WeightedConfusion, beta: float = 2.0) -> tuple[float, bool]:
    """Mass-weighted per-class F-beta. Returns (value, degenerate flag);
    degenerate is set when any 0/0 class term was zeroed by policy."""
    total = conf.total
    if total == 0:
        raise ValueError("empty confusion")
    value = 0.0
    degenerate = False
    for n, tp, fp, fn in _per_class(conf):
        if tp + fp == 0:
            p = 0.0
            degenerate = degenerate or tp + fn > 0
        else:
            p = tp / (tp + fp)
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        value += (n / total) * _fbeta_term(p, r, beta)
    return value, degenerate


def precision(conf: WeightedConfusion) -> tuple[float, bool]:
    """Positive-class precision; (0, degenerate=True) when nothing predicted positive."""
    denom = conf.tp + conf.fp
    if denom == 0:
        return 0.0, True
    return conf.tp / denom, False


def auc(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    weights: Sequence[float] | np.ndarray | None = None,
) -> float | None:
    """Weighted pairwise ranking probability; ties get half credit.

    Returns None when only one class is present.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    w = np.ones(len(s)) if weights is None else np.asarray(weights, dtype=float)
    wp_total = w[y == 1].sum()
    wn_total = w[y == 0].sum()
    if wp_total == 0 or wn_total == 0:
        return None

    order = np.argsort(s, kind="mergesort")
    s, y, w = s[order], y[order], w[order]
    num = 0.0
    cum_neg = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tie_pos = w[i:j][y[i:j] == 1].sum()
        tie_neg = w[i:j][y[i:j] == 0].sum()
        num += tie_pos * (cum_neg + 0.5 * tie_neg)
        cum_neg += tie_neg
        i = j
    return float(num / (wp_total * wn_total))


@dataclass
class ThresholdSearchResult:
    best_threshold: int
    best_wfbeta: float
    curve: list[tuple[int, float]]  # threshold -> weighted F-beta

    def to_dict(self) -> dict:
        return {
            "best_threshold": self.best_threshold,
            "best_wfbeta": self.best_wfbeta,
            "curve": [{"threshold": t, "wfbeta": v} for t, v in self.curve],
        }


def threshold_search(
    scores,
    labels,
    weights,
    beta: float = 2.0,
    grid: Sequence[int] | None = None,
) -> ThresholdSearchResult:
    """Grid threshold maximizing weighted F-beta; ties break to the smallest."""
    if len(np.asarray(scores)) == 0:
        raise ValueError("empty validation set")
    grid = list(range(0, 101)) if grid is None else sorted(grid)
    if not grid:
        raise ValueError("empty threshold grid")
    curve = []
    best_t, best_v = None, -1.0
    for t in grid:
        v, _ = weighted_fbeta(confusion(scores, labels, weights, t), beta)
        curve.append((t, v))
        if v > best_v:
            best_t, best_v = t, v
    return ThresholdSearchResult(best_threshold=best_t, best_wfbeta=best_v, curve=curve)


@dataclass
class EvalReport:
    threshold: int
    precision: float
    weighted_recall: float
    weighted_fbeta: float
    auc: float | None
    auc_unweighted: float | None
    confusion: WeightedConfusion
    n_evaluated: int
    n_excluded: int = 0
    window_id: str = ""
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "window_id": self.window_id,
            "threshold": self.threshold,
            "precision": self.precision,
            "weighted_recall": self.weighted_recall,
            "weighted_fbeta": self.weighted_fbeta,
            "auc": self.auc,
            "auc_unweighted": self.auc_unweighted,
            "confusion": self.confusion.to_dict(),
            "n_evaluated": self.n_evaluated,
            "n_excluded": self.n_excluded,
            "degenerate": self.degenerate,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)


def evaluate(
    scores,
    labels,
    weights,
    threshold: int,
    beta: float = 2.0,
    window_id: str = "",
    n_excluded: int = 0,
) -> EvalReport:
    """Full report at a fixed threshold."""
    s = np.asarray(scores)
    y = np.asarray(labels)
    w = np.asarray(weights, dtype=float)
    if len(s) == 0:
        return EvalReport(
            threshold=threshold,
            precision=0.0,
            weighted_recall=0.0,
            weighted_fbeta=0.0,
            auc=None,
            auc_unweighted=None,
            confusion=WeightedConfusion(0, 0, 0, 0),
            n_evaluated=0,
            n_excluded=n_excluded,
            window_id=window_id,
            degenerate=True,
        )
    conf = confusion(s, y, w, threshold)
    prec, prec_degen = precision(conf)
    wfb, fb_degen = weighted_fbeta(conf, beta)
    return EvalReport(
        threshold=threshold,
        precision=prec,
        weighted_recall=weighted_recall(conf),
        weighted_fbeta=wfb,
        auc=auc(s, y, w),
        auc_unweighted=auc(s, y, None),
        confusion=conf,
        n_evaluated=len(s),
        n_excluded=n_excluded,
        window_id=window_id,
        degenerate=prec_degen or fb_degen or len(set(y.tolist())) < 2,
    )


def render_table(columns: dict[str, EvalReport]) -> str:
    """Comparison table: rows Threshold/Precision/wR/wF2/AUC, one column per model."""
    names = list(columns)
    rows = [
        ("Threshold", [str(columns[n].threshold) for n in names]),
        ("Precision", [f"{columns[n].precision:.2f}" for n in names]),
        ("wR", [f"{columns[n].weighted_recall:.2f}" for n in names]),
        ("wF2", [f"{columns[n].weighted_fbeta:.2f}" for n in names]),
        (
            "AUC",
            [
                "-" if columns[n].auc is None else f"{columns[n].auc:.2f}"
                for n in names
            ],
        ),
    ]
    width = max(len(n) for n in names + ["Metric"]) + 2
    header = "Metric".ljust(12) + "".join(n.rjust(width) for n in names)
    lines = [header, "-" * len(header)]
    for label, vals in rows:
        lines.append(label.ljust(12) + "".join(v.rjust(width) for v in vals))
    return "\n".join(lines)

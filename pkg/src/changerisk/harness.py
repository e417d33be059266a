"""Temporal splitting, sliding-window backtesting and the team-feature
ablation experiment.

Splits assign rows by start_time into half-open intervals; a row exactly on
a boundary belongs to the later slice. The backtest retrains on all data
strictly before each prediction window (daily cutoff, materialized lazily at
weekly prediction points) and re-selects the operating threshold on the
trailing two months.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

from .corpus import ChangeTicket, Corpus
from .features import TeamHistoryIndex
from .metrics import EvalReport, evaluate
from .pipeline import (
    FittedPipeline,
    LabelSet,
    PipelineConfig,
    evaluate_pipeline,
    fit_pipeline,
    label_corpus,
)

MONTH = timedelta(days=30)


class SpanTooShortError(Exception):
    pass


class LeakageError(AssertionError):
    pass


@dataclass
class TemporalSplit:
    train_range: tuple[datetime, datetime]
    validation_range: tuple[datetime, datetime]
    test_range: tuple[datetime, datetime]
    train: list[ChangeTicket]
    validation: list[ChangeTicket]
    test: list[ChangeTicket]

    @property
    def counts(self) -> dict[str, int]:
        return {
            "train": len(self.train),
            "validation": len(self.validation),
            "test": len(self.test),
        }


def temporal_split(
    changes: Sequence[ChangeTicket],
    boundaries: tuple[datetime, datetime] | None = None,
    months: tuple[int, int, int] = (8, 2, 2),
) -> TemporalSplit:
    """Partition rows chronologically into train/validation/test.

    Default: the observed span is divided proportionally to `months`
    (8/2/2). Explicit boundary datetimes override the proportional rule.
    """
    if not changes:
        raise ValueError("no rows to split")
    starts = [c.start_time for c in changes]
    t0, t1 = min(starts), max(starts)
    if boundaries is None:
        need = sum(months) * MONTH
        if t1 - t0 < need:
            raise SpanTooShortError(
                f"span_too_short: corpus spans {(t1 - t0).days} days, "
                f"need >= {need.days}"
            )
        span = t1 - t0
        total = sum(months)
        b1 = t0 + span * (months[0] / total)
        b2 = t0 + span * ((months[0] + months[1]) / total)
    else:
        b1, b2 = boundaries
        if not (t0 <= b1 < b2):
            raise ValueError("boundaries must be ordered within the corpus span")
    train = [c for c in changes if c.start_time < b1]
    validation = [c for c in changes if b1 <= c.start_time < b2]
    test = [c for c in changes if c.start_time >= b2]
    return TemporalSplit(
        train_range=(t0, b1),
        validation_range=(b1, b2),
        test_range=(b2, t1 + timedelta(seconds=1)),
        train=train,
        validation=validation,
        test=test,
    )


@dataclass
class WindowPlan:
    stream_start: datetime
    stream_end: datetime
    prediction_cadence_days: int = 7
    retrain_cadence_days: int = 1
    validation_months: int = 2

    def windows(self) -> list[tuple[datetime, datetime]]:
        """Half-open prediction windows tiling [stream_start, stream_end)."""
        if self.stream_end <= self.stream_start:
            raise ValueError("empty stream range")
        out = []
        cur = self.stream_start
        step = timedelta(days=self.prediction_cadence_days)
        while cur < self.stream_end:
            out.append((cur, min(cur + step, self.stream_end)))
            cur += step
        return out

    def cutoff(self, window_start: datetime) -> datetime:
        """Latest daily-cadence retrain point not after the window start."""
        grid = timedelta(days=self.retrain_cadence_days)
        k = (window_start - self.stream_start) // grid
        return min(self.stream_start + k * grid, window_start)


@dataclass
class BacktestResult:
    reports: list[EvalReport]
    summary: dict[str, dict[str, float]]  # metric -> {mean, std}
    leakage_checks: int

    def to_dict(self) -> dict:
        return {
            "reports": [r.to_dict() for r in self.reports],
            "summary": self.summary,
            "leakage_checks": self.leakage_checks,
        }

    def save(self, out_dir) -> None:
        """Per-window JSON reports plus a summary CSV for plotting."""
        import os

        os.makedirs(out_dir, exist_ok=True)
        for r in self.reports:
            r.save(os.path.join(out_dir, f"window_{r.window_id}.json"))
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_start", "precision", "wR", "wF2", "AUC"])
            for r in self.reports:
                w.writerow(
                    [r.window_id, r.precision, r.weighted_recall, r.weighted_fbeta,
                     "" if r.auc is None else r.auc]
                )
        with open(os.path.join(out_dir, "stability.json"), "w") as fh:
            json.dump(self.summary, fh)


def _stability(reports: list[EvalReport]) -> dict[str, dict[str, float]]:
    usable = [r for r in reports if not r.degenerate]
    out: dict[str, dict[str, float]] = {}
    for metric in ("precision", "weighted_recall", "weighted_fbeta", "auc"):
        vals = [getattr(r, metric) for r in usable if getattr(r, metric) is not None]
        if vals:
            out[metric] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals)),
                "n": len(vals),
            }
    return out


def sliding_window_run(
    corpus: Corpus,
    plan: WindowPlan,
    config: PipelineConfig,
    labels: LabelSet | None = None,
) -> BacktestResult:
    """Retrain-then-predict over consecutive windows.

    For each window: train on every row starting strictly before the daily
    cutoff, re-select the threshold on the trailing validation slice, score
    the window rows against realized labels. A window with no rows yields a
    degenerate-flagged report and the series continues.
    """
    labels = label_corpus(corpus) if labels is None else labels
    team_index = (
        TeamHistoryIndex.build(corpus, labels.links)
        if config.include_team_features
        else None
    )
    changes = sorted(corpus.changes, key=lambda c: (c.start_time, c.id))
    reports: list[EvalReport] = []
    leakage_checks = 0
    for ws, we in plan.windows():
        window_id = ws.date().isoformat()
        cutoff = plan.cutoff(ws)
        train = [c for c in changes if c.start_time < cutoff]
        window_rows = [c for c in changes if ws <= c.start_time < we]
        for c in train:
            if c.start_time >= ws:
                raise LeakageError(f"training row {c.id} inside window {window_id}")
            leakage_checks += 1
        if not window_rows or not train:
            reports.append(
                evaluate([], [], [], config.default_threshold, window_id=window_id)
            )
            continue
        val_start = cutoff - plan.validation_months * MONTH
        val = [c for c in train if c.start_time >= val_start]
        fitted = fit_pipeline(train, val, labels, config, team_index)
        reports.append(evaluate_pipeline(fitted, window_rows, labels, window_id=window_id))
    return BacktestResult(
        reports=reports, summary=_stability(reports), leakage_checks=leakage_checks
    )


@dataclass
class AblationResult:
    without_team_features: EvalReport
    with_team_features: EvalReport
    thresholds: dict[str, int]
    n_rows: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "without_team_features": self.without_team_features.to_dict(),
            "with_team_features": self.with_team_features.to_dict(),
            "thresholds": self.thresholds,
            "n_rows": self.n_rows,
        }


def ablation_run(
    corpus: Corpus,
    config: PipelineConfig,
    labels: LabelSet | None = None,
) -> AblationResult:
    """Paired with/without team-feature runs on identical boundaries and seed.

    Both arms are restricted to rows carrying it_product so the comparison
    isolates the extra features rather than a population shift.
    """
    labels = label_corpus(corpus) if labels is None else labels
    covered = [c for c in corpus.changes if c.it_product is not None]
    if not covered:
        raise ValueError("no rows with it_product")
    split = temporal_split(covered)
    team_index = TeamHistoryIndex.build(corpus, labels.links)

    from dataclasses import replace as _replace

    arms: dict[str, EvalReport] = {}
    thresholds: dict[str, int] = {}
    for name, with_team in (("without_team_features", False), ("with_team_features", True)):
        cfg = _replace(config, include_team_features=with_team)
        fitted = fit_pipeline(
            split.train, split.validation, labels, cfg,
            team_index if with_team else None,
        )
        arms[name] = evaluate_pipeline(fitted, split.test, labels)
        thresholds[name] = fitted.model.threshold
    return AblationResult(
        without_team_features=arms["without_team_features"],
        with_team_features=arms["with_team_features"],
        thresholds=thresholds,
        n_rows={"train": len(split.train), "validation": len(split.validation),
                "test": len(split.test)},
    )

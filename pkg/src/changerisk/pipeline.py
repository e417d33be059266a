"""End-to-end glue: corpus -> labels -> features -> boosted forest ->
validation threshold -> evaluation, plus the rule-based comparison column.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import linkage, rules
from .corpus import ChangeTicket, Corpus, filter_incidents
from .features import FeatureMatrix, FeatureSchema, TeamHistoryIndex, assemble_matrix, fit_schema
from .gbdt import Hyperparams, TrainedModel, fit, predict_proba, predict_score
from .linkage import LabeledChange
from .metrics import EvalReport, MetricConfig, evaluate, threshold_search


@dataclass
class PipelineConfig:
    text_k: int = 16
    min_df: int = 5
    include_team_features: bool = False
    lookback_weeks: int = 12
    lookback_months: int = 6
    hyperparams: Hyperparams = field(
        default_factory=lambda: Hyperparams(
            n_trees=150,
            learning_rate=0.08,
            max_depth=3,
            n_bins=64,
            min_weighted_samples_per_leaf=50.0,
            l2_leaf_regularization=10.0,
        )
    )
    metric: MetricConfig = field(default_factory=MetricConfig)
    weighted_training: bool = True  # priority weights in the loss, not just eval
    default_threshold: int = 50
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "text_k": self.text_k,
            "min_df": self.min_df,
            "include_team_features": self.include_team_features,
            "lookback_weeks": self.lookback_weeks,
            "lookback_months": self.lookback_months,
            "hyperparams": self.hyperparams.to_dict(),
            "beta": self.metric.beta,
            "weighted_training": self.weighted_training,
            "default_threshold": self.default_threshold,
            "seed": self.seed,
        }


@dataclass
class LabelSet:
    """Resolved change labels plus the link evidence behind them."""

    by_id: dict[str, LabeledChange]
    links: list[linkage.ChangeIncidentLink]
    dangling_incidents: list[str]

    def arrays(self, row_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        y = np.array([self.by_id[r].label for r in row_ids], dtype=np.int64)
        w = np.array([self.by_id[r].sample_weight for r in row_ids])
        return y, w


def label_corpus(corpus: Corpus) -> LabelSet:
    """Run the full linkage chain and return per-change labels/weights."""
    incidents = filter_incidents(corpus.incidents)
    incidents = linkage.enrich_caused_by(incidents)
    links, dangling = linkage.build_links(corpus.changes, incidents)
    links = linkage.causality_filter(links, corpus.changes, incidents)
    labeled = linkage.label_changes(corpus.changes, links)
    return LabelSet(
        by_id={l.change_id: l for l in labeled},
        links=links,
        dangling_incidents=dangling,
    )


@dataclass
class FittedPipeline:
    schema: FeatureSchema
    model: TrainedModel
    config: PipelineConfig
    team_index: TeamHistoryIndex | None = None

    def matrix(self, changes: Sequence[ChangeTicket]) -> FeatureMatrix:
        return assemble_matrix(changes, self.schema, self.team_index)

    def score(self, changes: Sequence[ChangeTicket]) -> tuple[list[str], np.ndarray]:
        m = self.matrix(changes)
        return m.row_ids, predict_score(self.model.forest, m)

    def proba(self, changes: Sequence[ChangeTicket]) -> tuple[list[str], np.ndarray]:
        m = self.matrix(changes)
        return m.row_ids, predict_proba(self.model.forest, m)


def fit_pipeline(
    train_changes: Sequence[ChangeTicket],
    val_changes: Sequence[ChangeTicket],
    labels: LabelSet,
    config: PipelineConfig,
    team_index: TeamHistoryIndex | None = None,
) -> FittedPipeline:
    """Fit schema and forest on training rows, pick the operating threshold
    on the validation rows (falls back to the configured default when the
    validation slice is empty or single-class)."""
    schema = fit_schema(
        train_changes,
        text_k=config.text_k,
        min_df=config.min_df,
        include_team_features=config.include_team_features,
        lookback_weeks=config.lookback_weeks,
        lookback_months=config.lookback_months,
        seed=config.seed,
    )
    mtrain = assemble_matrix(train_changes, schema, team_index)
    y, w = labels.arrays(mtrain.row_ids)
    forest = fit(mtrain, y, w if config.weighted_training else None, config.hyperparams)

    threshold = config.default_threshold
    if len(val_changes):
        mval = assemble_matrix(val_changes, schema, team_index)
        if mval.n_rows:
            yv, wv = labels.arrays(mval.row_ids)
            if len(set(yv.tolist())) == 2:
                sv = predict_score(forest, mval)
                threshold = threshold_search(sv, yv, wv, beta=config.metric.beta).best_threshold

    starts = [c.start_time for c in train_changes]
    model = TrainedModel.create(
        forest,
        threshold=threshold,
        training_range=(min(starts).isoformat(), max(starts).isoformat()),
    )
    return FittedPipeline(schema=schema, model=model, config=config, team_index=team_index)


def evaluate_pipeline(
    fitted: FittedPipeline,
    test_changes: Sequence[ChangeTicket],
    labels: LabelSet,
    window_id: str = "",
    threshold: int | None = None,
) -> EvalReport:
    m = fitted.matrix(test_changes)
    if m.n_rows == 0:
        return evaluate([], [], [], fitted.model.threshold, window_id=window_id,
                        n_excluded=m.excluded_rows)
    y, w = labels.arrays(m.row_ids)
    s = predict_score(fitted.model.forest, m)
    return evaluate(
        s, y, w,
        fitted.model.threshold if threshold is None else threshold,
        beta=fitted.config.metric.beta,
        window_id=window_id,
        n_excluded=m.excluded_rows,
    )


def evaluate_rules(
    rule_config: rules.RuleConfig,
    test_changes: Sequence[ChangeTicket],
    labels: LabelSet,
    beta: float = 2.0,
    window_id: str = "",
) -> EvalReport:
    """The rule engine scored and judged under the same weighted metrics."""
    ids = [c.id for c in test_changes]
    s = np.array([rules.rule_score(c, rule_config) for c in test_changes])
    y = np.array([labels.by_id[r].label for r in ids])
    w = np.array([labels.by_id[r].sample_weight for r in ids])
    return evaluate(s, y, w, rule_config.threshold, beta=beta, window_id=window_id)

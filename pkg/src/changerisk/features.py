"""Feature assembly: text components, calendar features, categorical codes
preserving missingness, and trailing team aggregates keyed by IT Product.

Fit/transform are strictly separated: every statistic in a fitted schema
comes from the training rows it was fitted on, and the schema fingerprint
pins the fitted state for model compatibility checks.
"""

from __future__ import annotations

import hashlib
import json
import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from datetime import datetime
from statistics import median
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import ChangeTicket, Corpus, format_timestamp
from .linkage import ChangeIncidentLink
from .text import TextProjector, default_stopwords, fit_text_projector

TEXT_FIELDS = ("short_description", "full_description")

CATEGORICAL_FIELDS = (
    "ci_name",
    "ci_config_group",
    "ci_owner",
    "assignment_group",
    "support_offerings",
    "cab_approval_group",
    "confidentiality_rating",
    "integrity_rating",
    "availability_rating",
    "sox_critical",
    "automated_deployment",
    "fallback_available",
    "redundant_architecture",
    "change_category",
    "change_state",
)

DATE_FEATURES = (
    "hour",
    "day_of_week",
    "quarter",
    "month",
    "day_of_year",
    "day_of_month",
    "week_of_year",
    "is_weekend",
)

TEAM_METRICS = (
    "change_count",
    "pct_successful_changes",
    "incident_causing_change_count",
    "high_priority_incident_count",
    "pct_successful_releases",
    "release_count",
)

MISSING_CODE = -1  # categorical missing marker


class SchemaMismatchError(Exception):
    """Feature schema fingerprint differs from the one a model was trained on."""


def date_features(start_time: datetime) -> dict[str, int]:
    """Calendar features of the change start; ISO weeks, Monday=1."""
    iso = start_time.isocalendar()
    dow = iso.weekday
    return {
        "hour": start_time.hour,
        "day_of_week": dow,
        "quarter": (start_time.month - 1) // 3 + 1,
        "month": start_time.month,
        "day_of_year": start_time.timetuple().tm_yday,
        "day_of_month": start_time.day,
        "week_of_year": iso.week,
        "is_weekend": 1 if dow >= 6 else 0,
    }


# ---------------------------------------------------------------------------
# Team aggregates


@dataclass
class TeamHistoryIndex:
    """Per-product sorted event streams for trailing-window aggregation.

    Changes and releases are bucketed by end_time (outcomes are only known
    at completion); incidents by opened_at.
    """

    products: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def build(cls, corpus: Corpus, links: Sequence[ChangeIncidentLink]) -> "TeamHistoryIndex":
        product_of_change = {c.id: c.it_product for c in corpus.changes}
        opened = {i.id: i.opened_at for i in corpus.incidents}

        raw: dict[str, dict[str, list]] = {}

        def bucket(product: str | None, stream: str, when: float, flag: float = 1.0):
            if product is None:
                return
            streams = raw.setdefault(product, {})
            streams.setdefault(stream, []).append((when, flag))

        for chg in corpus.changes:
            bucket(
                chg.it_product,
                "changes",
                chg.end_time.timestamp(),
                1.0 if chg.closure_code == "successful" else 0.0,
            )
        # One event per linked change, at its earliest linked incident.
        earliest: dict[str, float] = {}
        for ln in links:
            when = opened.get(ln.incident_id)
            if when is None:
                continue
            ts = when.timestamp()
            prev = earliest.get(ln.change_id)
            if prev is None or ts < prev:
                earliest[ln.change_id] = ts
            bucket(product_of_change.get(ln.change_id), "incidents", ts)
        for cid, ts in earliest.items():
            bucket(product_of_change.get(cid), "caused_changes", ts)
        for rel in corpus.releases:
            bucket(
                rel.it_product,
                "releases",
                rel.end_time.timestamp(),
                1.0 if rel.outcome == "success" else 0.0,
            )

        products = {}
        for product, streams in raw.items():
            packed = {}
            for stream, events in streams.items():
                events.sort()
                times = np.asarray([e[0] for e in events])
                flags = np.asarray([e[1] for e in events])
                packed[stream] = {
                    "times": times,
                    "cum_flags": np.concatenate([[0.0], np.cumsum(flags)]),
                }
            products[product] = packed
        return cls(products=products)


def _bucket_counts(stream, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-bucket event counts and flag sums for half-open buckets between edges."""
    if stream is None:
        nb = len(edges) - 1
        return np.zeros(nb), np.zeros(nb)
    pos = np.searchsorted(stream["times"], edges, side="left")
    counts = np.diff(pos).astype(float)
    flags = np.diff(stream["cum_flags"][pos])
    return counts, flags


def compute_team_aggregates(
    index: TeamHistoryIndex,
    it_product: str | None,
    as_of: datetime,
    lookback_weeks: int = 12,
    lookback_months: int = 6,
) -> dict[str, float]:
    """Median weekly/monthly team metrics over trailing complete buckets
    ending strictly before as_of. Percentages with zero denominators are
    dropped from the median; a product with no prior history is all-missing.
    """
    out = {f"{m}_{g}": float("nan") for m in TEAM_METRICS for g in ("weekly", "monthly")}
    if it_product is None or it_product not in index.products:
        return out
    streams = index.products[it_product]
    cutoff = as_of.timestamp()
    has_history = any(
        s["times"].size and s["times"][0] < cutoff for s in streams.values()
    )
    if not has_history:
        return out

    for gran, span_days, n_buckets in (
        ("weekly", 7, lookback_weeks),
        ("monthly", 30, lookback_months),
    ):
        span = span_days * 86400.0
        edges = cutoff - span * np.arange(n_buckets, -1, -1)
        chg_n, chg_ok = _bucket_counts(streams.get("changes"), edges)
        caused_n, _ = _bucket_counts(streams.get("caused_changes"), edges)
        inc_n, _ = _bucket_counts(streams.get("incidents"), edges)
        rel_n, rel_ok = _bucket_counts(streams.get("releases"), edges)

        out[f"change_count_{gran}"] = float(median(chg_n))
        out[f"incident_causing_change_count_{gran}"] = float(median(caused_n))
        out[f"high_priority_incident_count_{gran}"] = float(median(inc_n))
        out[f"release_count_{gran}"] = float(median(rel_n))
        pct_chg = [ok / n for ok, n in zip(chg_ok, chg_n) if n > 0]
        out[f"pct_successful_changes_{gran}"] = (
            float(median(pct_chg)) if pct_chg else float("nan")
        )
        pct_rel = [ok / n for ok, n in zip(rel_ok, rel_n) if n > 0]
        out[f"pct_successful_releases_{gran}"] = (
            float(median(pct_rel)) if pct_rel else float("nan")
        )
    return out


# ---------------------------------------------------------------------------
# Schema + matrix


@dataclass
class FeatureSchema:
    """Fitted feature descriptors: names, kinds, groups, text projectors,
    category dictionaries, and a content fingerprint."""

    numeric_names: list[str]
    categorical_names: list[str]
    groups: dict[str, str]  # feature name -> group label (text components only)
    projectors: dict[str, TextProjector]
    category_maps: dict[str, dict[str, int]]
    include_team_features: bool
    lookback_weeks: int
    lookback_months: int
    fingerprint: str = ""

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = self._compute_fingerprint()

    def _compute_fingerprint(self) -> str:
        payload = {
            "numeric": self.numeric_names,
            "categorical": self.categorical_names,
            "groups": self.groups,
            "projectors": {f: p.to_dict() for f, p in sorted(self.projectors.items())},
            "category_maps": self.category_maps,
            "team": self.include_team_features,
            "lookbacks": [self.lookback_weeks, self.lookback_months],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def feature_names(self) -> list[str]:
        return self.numeric_names + self.categorical_names

    @property
    def feature_kinds(self) -> list[str]:
        return ["numeric"] * len(self.numeric_names) + ["categorical"] * len(
            self.categorical_names
        )

    def n_categories(self, name: str) -> int:
        # +1 for the reserved unknown code.
        return len(self.category_maps[name]) + 1

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "numeric_names": self.numeric_names,
            "categorical_names": self.categorical_names,
            "groups": self.groups,
            "projectors": {f: p.to_dict() for f, p in self.projectors.items()},
            "category_maps": self.category_maps,
            "include_team_features": self.include_team_features,
            "lookback_weeks": self.lookback_weeks,
            "lookback_months": self.lookback_months,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            numeric_names=list(d["numeric_names"]),
            categorical_names=list(d["categorical_names"]),
            groups=dict(d["groups"]),
            projectors={
                f: TextProjector.from_dict(p) for f, p in d["projectors"].items()
            },
            category_maps={k: dict(v) for k, v in d["category_maps"].items()},
            include_team_features=bool(d["include_team_features"]),
            lookback_weeks=int(d["lookback_weeks"]),
            lookback_months=int(d["lookback_months"]),
            fingerprint=d["fingerprint"],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FeatureMatrix:
    row_ids: list[str]
    numeric: np.ndarray  # (n, p_num) float64, NaN = missing
    categorical: np.ndarray  # (n, p_cat) int32, -1 = missing
    schema_fingerprint: str
    excluded_rows: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.row_ids)


def _categorical_value(chg: ChangeTicket, name: str) -> str | None:
    val = getattr(chg, name)
    if val is None:
        return None
    if isinstance(val, bool):
        return "true" if val else "false"
    return str(val)


def fit_schema(
    train_changes: Sequence[ChangeTicket],
    text_k: int = 50,
    min_df: int = 3,
    include_team_features: bool = False,
    lookback_weeks: int = 12,
    lookback_months: int = 6,
    stopwords: frozenset[str] | None = None,
    seed: int = 0,
) -> FeatureSchema:
    """Fit text projectors and category dictionaries on training rows only."""
    if not train_changes:
        raise ValueError("no training rows")
    stopwords = default_stopwords() if stopwords is None else stopwords
    if include_team_features:
        train_changes = [c for c in train_changes if c.it_product is not None]
        if not train_changes:
            raise ValueError("no training rows with it_product")

    projectors = {}
    groups: dict[str, str] = {}
    numeric_names: list[str] = []
    for fld in TEXT_FIELDS:
        proj = fit_text_projector(
            [getattr(c, fld) for c in train_changes],
            k=text_k,
            stopwords=stopwords,
            min_df=min_df,
            seed=seed,
        )
        projectors[fld] = proj
        for i in range(text_k):
            name = f"{fld}_svd_{i}"
            numeric_names.append(name)
            groups[name] = fld

    numeric_names.extend(f"date_{n}" for n in DATE_FEATURES)
    numeric_names.extend(["impacted_services", "outage_total_duration"])

    cat_fields = list(CATEGORICAL_FIELDS)
    if include_team_features:
        for metric in TEAM_METRICS:
            for gran in ("weekly", "monthly"):
                numeric_names.append(f"team_{metric}_{gran}")
        cat_fields.append("it_product")

    category_maps = {}
    for fld in cat_fields:
        values = sorted(
            {v for c in train_changes if (v := _categorical_value(c, fld)) is not None}
        )
        category_maps[fld] = {v: i for i, v in enumerate(values)}

    return FeatureSchema(
        numeric_names=numeric_names,
        categorical_names=cat_fields,
        groups=groups,
        projectors=projectors,
        category_maps=category_maps,
        include_team_features=include_team_features,
        lookback_weeks=lookback_weeks,
        lookback_months=lookback_months,
    )


def assemble_matrix(
    changes: Sequence[ChangeTicket],
    schema: FeatureSchema,
    team_index: TeamHistoryIndex | None = None,
) -> FeatureMatrix:
    """Transform changes into the schema's column order.

    With team features enabled, rows lacking it_product are excluded and
    counted; unseen categories map to the reserved unknown code.
    """
    excluded = 0
    if schema.include_team_features:
        if team_index is None:
            raise ValueError("team_index required when team features are enabled")
        kept = [c for c in changes if c.it_product is not None]
        excluded = len(changes) - len(kept)
        changes = kept

    n = len(changes)
    numeric = np.full((n, len(schema.numeric_names)), np.nan)
    categorical = np.full((n, len(schema.categorical_names)), MISSING_CODE, dtype=np.int32)

    col = 0
    for fld in TEXT_FIELDS:
        proj = schema.projectors[fld]
        block = proj.transform([getattr(c, fld) for c in changes])
        numeric[:, col : col + proj.k] = block
        col += proj.k
    for i, chg in enumerate(changes):
        feats = date_features(chg.start_time)
        for j, name in enumerate(DATE_FEATURES):
            numeric[i, col + j] = feats[name]
    col += len(DATE_FEATURES)
    for i, chg in enumerate(changes):
        if chg.impacted_services is not None:
            numeric[i, col] = chg.impacted_services
        if chg.outage_total_duration is not None:
            numeric[i, col + 1] = chg.outage_total_duration
    col += 2
    if schema.include_team_features:
        names = [
            f"{metric}_{gran}"
            for metric in TEAM_METRICS
            for gran in ("weekly", "monthly")
        ]
        for i, chg in enumerate(changes):
            aggs = compute_team_aggregates(
                team_index,
                chg.it_product,
                chg.start_time,
                schema.lookback_weeks,
                schema.lookback_months,
            )
            for j, name in enumerate(names):
                numeric[i, col + j] = aggs[name]
        col += len(names)
    assert col == len(schema.numeric_names)

    for j, fld in enumerate(schema.categorical_names):
        cmap = schema.category_maps[fld]
        unknown = len(cmap)
        for i, chg in enumerate(changes):
            val = _categorical_value(chg, fld)
            if val is None:
                continue
            categorical[i, j] = cmap.get(val, unknown)

    return FeatureMatrix(
        row_ids=[c.id for c in changes],
        numeric=numeric,
        categorical=categorical,
        schema_fingerprint=schema.fingerprint,
        excluded_rows=excluded,
    )


# ---------------------------------------------------------------------------
# Columnar binary persistence: magic, u64 header length, JSON header,
# numeric block (float64 LE, column-major), categorical block (int32 LE).

_MAGIC = b"CRFM"


def save_matrix(matrix: FeatureMatrix, path) -> None:
    header = json.dumps(
        {
            "version": 1,
            "n_rows": matrix.n_rows,
            "n_numeric": matrix.numeric.shape[1],
            "n_categorical": matrix.categorical.shape[1],
            "missing_numeric": "nan",
            "missing_categorical": MISSING_CODE,
            "row_ids": matrix.row_ids,
            "schema_fingerprint": matrix.schema_fingerprint,
            "excluded_rows": matrix.excluded_rows,
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.asfortranarray(matrix.numeric).astype("<f8").tobytes(order="F"))
        fh.write(np.asfortranarray(matrix.categorical).astype("<i4").tobytes(order="F"))


def load_matrix(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a feature-matrix file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        n, pn, pc = header["n_rows"], header["n_numeric"], header["n_categorical"]
        numeric = np.frombuffer(fh.read(n * pn * 8), dtype="<f8").reshape(
            (n, pn), order="F"
        )
        categorical = np.frombuffer(fh.read(n * pc * 4), dtype="<i4").reshape(
            (n, pc), order="F"
        )
    return FeatureMatrix(
        row_ids=list(header["row_ids"]),
        numeric=np.ascontiguousarray(numeric),
        categorical=np.ascontiguousarray(categorical),
        schema_fingerprint=header["schema_fingerprint"],
        excluded_rows=header["excluded_rows"],
    )

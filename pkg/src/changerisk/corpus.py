"""ITSM record types, ingestion, validation, dedup, and incident filtering.

Records arrive as UTF-8 JSON-lines (one object per line, missing = absent or
null) or as CSV with a header row (missing = empty cell; ``baseline_inputs``
is a JSON-encoded cell). Validated corpora are immutable snapshots.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Iterable, Iterator, Mapping

CHANGE_CLOSURE_CODES = frozenset(
    {"successful", "successful_with_problems", "failed", "cancelled"}
)
RELEASE_OUTCOMES = frozenset({"success", "partial_success", "failure"})

# Priority name -> severity rank (lower = more severe).
PRIORITY_RANKS = {"P0_major": 0, "P1": 1, "P2": 2}

# Closure codes the paper names as irrelevant; config-extensible.
DEFAULT_IRRELEVANT_CLOSURE_CODES = frozenset(
    {"Invalid event", "Withdrawn by Customer"}
)


class CorpusError(Exception):
    """Stream-level ingestion failure (I/O, unreadable source)."""


@dataclass(frozen=True)
class ChangeTicket:
    id: str
    start_time: datetime
    end_time: datetime
    short_description: str = ""
    full_description: str = ""
    ci_name: str | None = None
    ci_config_group: str | None = None
    ci_owner: str | None = None
    assignment_group: str | None = None
    support_offerings: str | None = None
    cab_approval_group: str | None = None
    it_product: str | None = None
    confidentiality_rating: str | None = None
    integrity_rating: str | None = None
    availability_rating: str | None = None
    sox_critical: bool | None = None
    automated_deployment: bool | None = None
    fallback_available: bool | None = None
    redundant_architecture: bool | None = None
    change_category: str | None = None
    change_state: str | None = None
    impacted_services: int | None = None
    outage_total_duration: float | None = None
    closure_code: str = "successful"
    baseline_inputs: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class IncidentTicket:
    id: str
    priority: str
    opened_at: datetime
    closure_code: str = ""
    caused_by_change: str | None = None
    solution_text: str = ""
    ambiguous_cause: bool = False

    @property
    def priority_rank(self) -> int:
        return PRIORITY_RANKS[self.priority]


@dataclass(frozen=True)
class ReleaseRecord:
    id: str
    it_product: str
    start_time: datetime
    end_time: datetime
    outcome: str
    po_approved: bool | None = None
    peer_reviewed: bool | None = None
    related_changes: tuple[str, ...] = ()


@dataclass(frozen=True)
class Rejection:
    line_number: int
    reason_code: str
    raw_excerpt: str

    def to_dict(self) -> dict:
        return {
            "line_number": self.line_number,
            "reason_code": self.reason_code,
            "raw_excerpt": self.raw_excerpt,
        }


@dataclass
class IngestResult:
    kind: str
    records: list
    rejections: list[Rejection]

    def write_rejection_report(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rej in self.rejections:
                fh.write(json.dumps(rej.to_dict()) + "\n")


@dataclass(frozen=True)
class Corpus:
    """Immutable validated snapshot of all three record streams."""

    changes: tuple[ChangeTicket, ...]
    incidents: tuple[IncidentTicket, ...]
    releases: tuple[ReleaseRecord, ...]

    def change_ids(self) -> frozenset[str]:
        return frozenset(c.id for c in self.changes)


def parse_timestamp(value: Any) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, str):
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    else:
        raise ValueError(f"not a timestamp: {value!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _get(row: Mapping[str, Any], name: str) -> Any:
    val = row.get(name)
    if val is None or (isinstance(val, str) and val == ""):
        return None
    return val


def _as_flag(val: Any) -> bool:
    if isinstance(val, bool):
        return val
    if isinstance(val, str):
        low = val.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
    if isinstance(val, (int, float)) and val in (0, 1):
        return bool(val)
    raise ValueError(f"not a flag: {val!r}")


def _validate_change(row: Mapping[str, Any]) -> ChangeTicket:
    cid = _get(row, "id")
    if not cid:
        raise ValueError("missing_id")
    for req in ("start_time", "end_time"):
        if _get(row, req) is None:
            raise ValueError("missing_timestamp")
    try:
        start = parse_timestamp(row["start_time"])
        end = parse_timestamp(row["end_time"])
    except ValueError:
        raise ValueError("malformed_timestamp") from None
    if start > end:
        raise ValueError("invalid_time_range")
    closure = _get(row, "closure_code") or "successful"
    if closure not in CHANGE_CLOSURE_CODES:
        raise ValueError("unknown_enum")

    def flag(name: str) -> bool | None:
        val = _get(row, name)
        if val is None:
            return None
        try:
            return _as_flag(val)
        except ValueError:
            raise ValueError("bad_flag") from None

    impacted = _get(row, "impacted_services")
    if impacted is not None:
        impacted = int(impacted)
        if impacted < 0:
            raise ValueError("bad_value")
    outage = _get(row, "outage_total_duration")
    if outage is not None:
        outage = float(outage)
        if outage < 0:
            raise ValueError("bad_value")
    baseline = _get(row, "baseline_inputs") or {}
    if isinstance(baseline, str):
        try:
            baseline = json.loads(baseline)
        except json.JSONDecodeError:
            raise ValueError("bad_value") from None
    if not isinstance(baseline, Mapping):
        raise ValueError("bad_value")

    def cat(name: str) -> str | None:
        val = _get(row, name)
        return None if val is None else str(val)

    return ChangeTicket(
        id=str(cid),
        start_time=start,
        end_time=end,
        short_description=str(_get(row, "short_description") or ""),
        full_description=str(_get(row, "full_description") or ""),
        ci_name=cat("ci_name"),
        ci_config_group=cat("ci_config_group"),
        ci_owner=cat("ci_owner"),
        assignment_group=cat("assignment_group"),
        support_offerings=cat("support_offerings"),
        cab_approval_group=cat("cab_approval_group"),
        it_product=cat("it_product"),
        confidentiality_rating=cat("confidentiality_rating"),
        integrity_rating=cat("integrity_rating"),
        availability_rating=cat("availability_rating"),
        sox_critical=flag("sox_critical"),
        automated_deployment=flag("automated_deployment"),
        fallback_available=flag("fallback_available"),
        redundant_architecture=flag("redundant_architecture"),
        change_category=cat("change_category"),
        change_state=cat("change_state"),
        impacted_services=impacted,
        outage_total_duration=outage,
        closure_code=closure,
        baseline_inputs=dict(baseline),
    )


def _validate_incident(row: Mapping[str, Any]) -> IncidentTicket:
    iid = _get(row, "id")
    if not iid:
        raise ValueError("missing_id")
    priority = _get(row, "priority")
    if priority not in PRIORITY_RANKS:
        raise ValueError("unknown_enum")
    if _get(row, "opened_at") is None:
        raise ValueError("missing_timestamp")
    try:
        opened = parse_timestamp(row["opened_at"])
    except ValueError:
        raise ValueError("malformed_timestamp") from None
    caused = _get(row, "caused_by_change")
    return IncidentTicket(
        id=str(iid),
        priority=str(priority),
        opened_at=opened,
        closure_code=str(_get(row, "closure_code") or ""),
        caused_by_change=None if caused is None else str(caused),
        solution_text=str(_get(row, "solution_text") or ""),
    )


def _validate_release(row: Mapping[str, Any]) -> ReleaseRecord:
    rid = _get(row, "id")
    if not rid:
        raise ValueError("missing_id")
    product = _get(row, "it_product")
    if not product:
        raise ValueError("missing_it_product")
    outcome = _get(row, "outcome")
    if outcome not in RELEASE_OUTCOMES:
        raise ValueError("unknown_enum")
    for req in ("start_time", "end_time"):
        if _get(row, req) is None:
            raise ValueError("missing_timestamp")
    try:
        start = parse_timestamp(row["start_time"])
        end = parse_timestamp(row["end_time"])
    except ValueError:
        raise ValueError("malformed_timestamp") from None
    if start > end:
        raise ValueError("invalid_time_range")

    def flag(name: str) -> bool | None:
        val = _get(row, name)
        if val is None:
            return None
        try:
            return _as_flag(val)
        except ValueError:
            raise ValueError("bad_flag") from None

    related = _get(row, "related_changes") or ()
    if isinstance(related, str):
        related = tuple(s for s in related.split(";") if s)
    else:
        related = tuple(str(s) for s in related)
    return ReleaseRecord(
        id=str(rid),
        it_product=str(product),
        start_time=start,
        end_time=end,
        outcome=str(outcome),
        po_approved=flag("po_approved"),
        peer_reviewed=flag("peer_reviewed"),
        related_changes=related,
    )


_VALIDATORS = {
    "change": _validate_change,
    "incident": _validate_incident,
    "release": _validate_release,
}


def ingest(rows: Iterable[Mapping[str, Any]], kind: str) -> IngestResult:
    """Validate a stream of raw rows into typed records plus a rejection report.

    Duplicate ids reject the later row for changes/releases; incident
    duplicates collapse last-write-wins by file order.
    """
    if kind not in _VALIDATORS:
        raise ValueError(f"unknown record kind: {kind}")
    validate = _VALIDATORS[kind]
    accepted: dict[str, Any] = {}
    rejections: list[Rejection] = []
    for lineno, row in enumerate(rows, start=1):
        try:
            record = validate(row)
        except ValueError as exc:
            excerpt = json.dumps(row, default=str)[:200]
            rejections.append(Rejection(lineno, str(exc), excerpt))
            continue
        if record.id in accepted and kind != "incident":
            excerpt = json.dumps(row, default=str)[:200]
            rejections.append(Rejection(lineno, "duplicate_id", excerpt))
            continue
        accepted[record.id] = record
    return IngestResult(kind=kind, records=list(accepted.values()), rejections=rejections)


def _iter_jsonl(path) -> Iterator[Mapping[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                yield {"_unparseable": line}


def ingest_jsonl(path, kind: str) -> IngestResult:
    try:
        return ingest(_iter_jsonl(path), kind)
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc


def ingest_csv(path, kind: str) -> IngestResult:
    """CSV adapter: header row, empty cell = missing, same field names."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    return ingest(rows, kind)


def filter_incidents(
    incidents: Iterable[IncidentTicket],
    irrelevant_codes: frozenset[str] | set[str] = DEFAULT_IRRELEVANT_CLOSURE_CODES,
) -> list[IncidentTicket]:
    """Drop incidents whose closure code marks them irrelevant.

    Input is deduplicated by id first (last record in order wins).
    """
    deduped: dict[str, IncidentTicket] = {}
    for inc in incidents:
        deduped[inc.id] = inc
    return [inc for inc in deduped.values() if inc.closure_code not in irrelevant_codes]


def record_to_dict(record) -> dict:
    """JSON-serializable form preserving missingness as null."""
    out: dict[str, Any] = {}
    for name, val in vars(record).items():
        if isinstance(val, datetime):
            out[name] = format_timestamp(val)
        elif isinstance(val, tuple):
            out[name] = list(val)
        elif isinstance(val, Mapping):
            out[name] = dict(val)
        else:
            out[name] = val
    return out


def write_jsonl(records: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec)) + "\n")


def load_corpus(
    changes_path=None,
    incidents_path=None,
    releases_path=None,
    irrelevant_codes=DEFAULT_IRRELEVANT_CLOSURE_CODES,
) -> tuple[Corpus, list[Rejection]]:
    """Ingest all three streams and assemble an immutable corpus."""
    rejections: list[Rejection] = []

    def load(path, kind):
        if path is None:
            return []
        result = (
            ingest_csv(path, kind)
            if str(path).endswith(".csv")
            else ingest_jsonl(path, kind)
        )
        rejections.extend(result.rejections)
        return result.records

    changes = load(changes_path, "change")
    incidents = filter_incidents(load(incidents_path, "incident"), irrelevant_codes)
    releases = load(releases_path, "release")
    return (
        Corpus(changes=tuple(changes), incidents=tuple(incidents), releases=tuple(releases)),
        rejections,
    )

"""Causal change->incident linking, causality filtering, labels and weights.

A change is labelled positive when it has at least one retained causal link
to a high-priority incident; the most severe linked priority drives the
sample weight (P0/P1 -> 5, P2 -> 3, unlinked -> 1).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .corpus import ChangeTicket, IncidentTicket, PRIORITY_RANKS

# Default id pattern matching the synthetic corpus id scheme.
DEFAULT_CHANGE_ID_PATTERN = r"CHG\d+"

PRIORITY_WEIGHTS = {"P0_major": 5.0, "P1": 5.0, "P2": 3.0, None: 1.0}


@dataclass(frozen=True)
class ChangeIncidentLink:
    change_id: str
    incident_id: str
    source: str  # caused_by_field | solution_mention
    incident_priority: str

    def to_dict(self) -> dict:
        return {
            "change_id": self.change_id,
            "incident_id": self.incident_id,
            "source": self.source,
        }


@dataclass(frozen=True)
class LabeledChange:
    change_id: str
    label: int
    highest_priority: str | None
    sample_weight: float

    def to_dict(self) -> dict:
        return {
            "change_id": self.change_id,
            "label": self.label,
            "highest_priority": self.highest_priority,
            "sample_weight": self.sample_weight,
        }


def enrich_caused_by(
    incidents: Sequence[IncidentTicket],
    change_id_pattern: str = DEFAULT_CHANGE_ID_PATTERN,
) -> list[IncidentTicket]:
    """Fill empty caused_by_change fields from solution-text mentions.

    Existing values are never overwritten; texts mentioning more than one
    distinct change id are left empty and flagged ambiguous.
    """
    pattern = re.compile(change_id_pattern)
    out = []
    for inc in incidents:
        if inc.caused_by_change is not None:
            out.append(inc)
            continue
        mentions = sorted(set(pattern.findall(inc.solution_text)))
        if len(mentions) == 1:
            out.append(replace(inc, caused_by_change=mentions[0]))
        elif len(mentions) > 1:
            out.append(replace(inc, ambiguous_cause=True))
        else:
            out.append(inc)
    return out


def build_links(
    changes: Sequence[ChangeTicket], incidents: Sequence[IncidentTicket]
) -> tuple[list[ChangeIncidentLink], list[str]]:
    """One link per (change, incident) with a resolvable caused_by_change.

    Returns (links, dangling incident ids referencing unknown changes).
    Assumes enrich_caused_by has been applied; solution-derived links are
    tagged by checking whether the id appears in the solution text.
    """
    known = {c.id for c in changes}
    links: list[ChangeIncidentLink] = []
    dangling: list[str] = []
    seen: set[tuple[str, str]] = set()
    for inc in incidents:
        cid = inc.caused_by_change
        if cid is None:
            continue
        if cid not in known:
            dangling.append(inc.id)
            continue
        key = (cid, inc.id)
        if key in seen:
            continue
        seen.add(key)
        source = "solution_mention" if cid in inc.solution_text else "caused_by_field"
        links.append(
            ChangeIncidentLink(
                change_id=cid,
                incident_id=inc.id,
                source=source,
                incident_priority=inc.priority,
            )
        )
    return links, dangling


def causality_filter(
    links: Iterable[ChangeIncidentLink],
    changes: Sequence[ChangeTicket],
    incidents: Sequence[IncidentTicket],
) -> list[ChangeIncidentLink]:
    """Drop links where the change started strictly after the incident opened.

    Equal timestamps are retained (coarse-grained clocks make strict
    inequality too aggressive).
    """
    change_start = {c.id: c.start_time for c in changes}
    opened = {i.id: i.opened_at for i in incidents}
    return [
        ln
        for ln in links
        if change_start[ln.change_id] <= opened[ln.incident_id]
    ]


def label_changes(
    changes: Sequence[ChangeTicket],
    links: Iterable[ChangeIncidentLink],
    weights: dict | None = None,
) -> list[LabeledChange]:
    """Binary labels with priority-derived sample weights.

    label=1 iff at least one causal link exists, independent of link count;
    highest_priority is the most severe among linked incidents.
    """
    weights = PRIORITY_WEIGHTS if weights is None else weights
    best: dict[str, str] = {}
    for ln in links:
        prev = best.get(ln.change_id)
        if prev is None or PRIORITY_RANKS[ln.incident_priority] < PRIORITY_RANKS[prev]:
            best[ln.change_id] = ln.incident_priority
    out = []
    for chg in changes:
        prio = best.get(chg.id)
        out.append(
            LabeledChange(
                change_id=chg.id,
                label=1 if prio is not None else 0,
                highest_priority=prio,
                sample_weight=weights[prio],
            )
        )
    return out


def write_links_jsonl(links: Iterable[ChangeIncidentLink], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ln in links:
            fh.write(json.dumps(ln.to_dict()) + "\n")


def write_labels_jsonl(labels: Iterable[LabeledChange], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(json.dumps(lab.to_dict()) + "\n")

"""Config-driven rule-based risk scoring: weighted factor points mapped to a
0-100 score, three risk bands, and binary classification at the high cutoff.

The production business rules are confidential, so the engine is fully
data-driven; an illustrative config covering the documented factor families
ships with the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

from .corpus import ChangeTicket

MISSING_KEY = "__missing__"
DEFAULT_KEY = "__default__"


class RuleConfigError(Exception):
    pass


class UnmappedValueError(Exception):
    """A factor saw a field value with no mapping entry and no default."""


@dataclass
class RuleFactor:
    name: str
    source: str  # field name; looked up in baseline_inputs first, then the ticket
    mapping: dict[str, float]  # value -> points 0-100; MISSING_KEY / DEFAULT_KEY special
    weight: float

    def points(self, change: ChangeTicket) -> float:
        value = change.baseline_inputs.get(self.source)
        if value is None:
            value = getattr(change, self.source, None)
        if isinstance(value, bool):
            value = "true" if value else "false"
        if value is None:
            if MISSING_KEY in self.mapping:
                return self.mapping[MISSING_KEY]
            raise UnmappedValueError(
                f"factor {self.name!r}: missing value and no {MISSING_KEY} entry"
            )
        key = str(value)
        if key in self.mapping:
            return self.mapping[key]
        if DEFAULT_KEY in self.mapping:
            return self.mapping[DEFAULT_KEY]
        raise UnmappedValueError(f"factor {self.name!r}: unmapped value {key!r}")


@dataclass
class RuleConfig:
    factors: list[RuleFactor]
    band_cutoffs: tuple[int, int] = (33, 59)
    threshold: int = 60

    def validate(self) -> None:
        total = sum(f.weight for f in self.factors)
        if total <= 0:
            raise RuleConfigError("factor weights must sum to a positive number")
        lo, hi = self.band_cutoffs
        if not (0 <= lo < hi <= 100):
            raise RuleConfigError("band cutoffs must be strictly increasing within 0-100")
        for f in self.factors:
            if f.weight < 0:
                raise RuleConfigError(f"factor {f.name!r} has negative weight")
            for v in f.mapping.values():
                if not (0 <= v <= 100):
                    raise RuleConfigError(f"factor {f.name!r}: points outside 0-100")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RuleConfig":
        cfg = cls(
            factors=[
                RuleFactor(
                    name=f["name"],
                    source=f["source"],
                    mapping={k: float(v) for k, v in f["mapping"].items()},
                    weight=float(f["weight"]),
                )
                for f in d["factors"]
            ],
            band_cutoffs=tuple(d.get("band_cutoffs", (33, 59))),
            threshold=int(d.get("threshold", 60)),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RuleConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def example(cls) -> "RuleConfig":
        raw = resources.files("changerisk.data").joinpath("rules_example.json").read_text()
        return cls.from_dict(json.loads(raw))


def rule_score(change: ChangeTicket, config: RuleConfig) -> int:
    """Weighted mean of factor points, rounded half-up to an integer 0-100."""
    total_weight = sum(f.weight for f in config.factors)
    weighted = sum(f.weight * f.points(change) for f in config.factors)
    raw = weighted / total_weight
    return int(raw + 0.5)


def risk_band(score: int, cutoffs: tuple[int, int] = (33, 59)) -> str:
    if not (0 <= score <= 100):
        raise ValueError(f"score out of range: {score}")
    lo, hi = cutoffs
    if score <= lo:
        return "low"
    if score <= hi:
        return "medium"
    return "high"


def classify(score: int, config: RuleConfig) -> bool:
    return score >= config.threshold


def validate_against_corpus(
    config: RuleConfig, changes: Iterable[ChangeTicket]
) -> dict[str, list[str]]:
    """Report unmapped (factor, value) pairs without raising."""
    unmapped: dict[str, set[str]] = {}
    for change in changes:
        for factor in config.factors:
            try:
                factor.points(change)
            except UnmappedValueError:
                value = change.baseline_inputs.get(factor.source)
                if value is None:
                    value = getattr(change, factor.source, None)
                unmapped.setdefault(factor.name, set()).add(str(value))
    return {name: sorted(values) for name, values in unmapped.items()}

"""Deterministic synthetic ITSM corpus with planted signal.

Substitutes for the proprietary production dataset at desk scale: changes
whose description texts carry risk-token signal, per-team latent reliability
driving both release outcomes and incident propensity, incidents linked via
the caused-by field (70%), solution-text mentions (20%) or left unlinked
(10%), and rule-factor fields that correlate only weakly with the outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .corpus import ChangeTicket, Corpus, IncidentTicket, ReleaseRecord

RISKY_TOKENS = [
    "migration", "firewall", "database", "legacy", "upgrade", "manual",
    "rollback", "patch", "network", "unsupported", "hotfix", "critical",
]
SAFE_TOKENS = [
    "routine", "certificate", "renewal", "standard", "automated", "cleanup",
    "documentation", "monitoring", "cosmetic", "minor",
]
FILLER_TOKENS = [
    "deploy", "update", "server", "application", "service", "config",
    "release", "version", "environment", "platform", "module", "script",
    "system", "cluster", "instance", "component", "endpoint", "gateway",
    "storage", "backup", "account", "portal", "schedule", "window",
    "request", "ticket", "review", "validation", "maintenance", "vendor",
]


@dataclass
class SynthConfig:
    n_changes: int = 20000
    incident_rate: float = 0.024
    priority_mix: tuple[float, float, float] = (1.0, 2.0, 7.0)  # P0:P1:P2
    n_products: int = 40
    text_signal: float = 2.5
    team_signal: float = 1.0
    it_product_coverage: float = 0.5
    start: str = "2023-01-01"
    end: str = "2024-01-01"
    seed: int = 7
    freeze_period: tuple[str, str] | None = None  # optional low-activity window
    caused_by_fraction: float = 0.7
    solution_mention_fraction: float = 0.2

    def validate(self) -> None:
        if not (0 < self.incident_rate < 1):
            raise ValueError("incident_rate must be in (0, 1)")
        if self.n_changes <= 0:
            raise ValueError("n_changes must be positive")
        if not (0 <= self.it_product_coverage <= 1):
            raise ValueError("it_product_coverage must be in [0, 1]")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _calibrate_intercept(raw: np.ndarray, target: float) -> float:
    lo, hi = -20.0, 20.0
    for _ in range(80):
        mid = (lo + hi) / 2
        if _sigmoid(raw + mid).mean() > target:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def _ts(s: str) -> datetime:
    return datetime.fromisoformat(s).replace(tzinfo=timezone.utc)


def _choice_str(rng, pool, n):
    return [pool[i] for i in rng.integers(0, len(pool), n)]


def synth_generate(config: SynthConfig) -> Corpus:
    """Generate a validated corpus; fully determined by config.seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_changes
    t0 = _ts(config.start)
    t1 = _ts(config.end)
    span = (t1 - t0).total_seconds()

    products = [f"PRD{i:03d}" for i in range(config.n_products)]
    reliability = rng.standard_normal(config.n_products)

    start_secs = np.sort(rng.uniform(0, span, n))
    if config.freeze_period:
        f0 = (_ts(config.freeze_period[0]) - t0).total_seconds()
        f1 = (_ts(config.freeze_period[1]) - t0).total_seconds()
        inside = (start_secs >= f0) & (start_secs < f1)
        keep = ~inside | (rng.random(n) < 0.1)
        start_secs = start_secs[keep]
        n = len(start_secs)

    duration_min = np.exp(rng.normal(4.0, 0.8, n)).clip(10, 2880)
    product_idx = rng.integers(0, config.n_products, n)
    has_product = rng.random(n) < config.it_product_coverage

    ci_pool = [f"ci-{i:03d}" for i in range(120)]
    ci_effect = np.zeros(120)
    ci_effect[rng.choice(120, 12, replace=False)] = 0.8
    ci_idx = rng.integers(0, 120, n)
    categories = np.asarray(["standard", "normal", "emergency"])[
        rng.choice(3, n, p=[0.5, 0.4, 0.1])
    ]

    # Planted text signal: risky vs safe token counts driven by a latent
    # intrinsic risk draw, standardized into the outcome logit.
    u = rng.standard_normal(n)
    risky_count = rng.binomial(5, _sigmoid(0.9 * u))
    safe_count = rng.binomial(5, _sigmoid(-0.9 * u))
    tok_balance = risky_count - safe_count
    z_text = (tok_balance - tok_balance.mean()) / max(tok_balance.std(), 1e-9)

    cat_eff = ci_effect[ci_idx] + 0.3 * (categories == "emergency")
    noise = rng.standard_normal(n)
    raw = (
        config.text_signal * z_text
        + config.team_signal * reliability[product_idx]
        + 0.6 * cat_eff
        + 0.5 * noise
    )
    # Aim the post-linkage label rate at incident_rate: ~10% of generated
    # positives stay unlinked by design.
    linked_frac = config.caused_by_fraction + config.solution_mention_fraction
    target = min(config.incident_rate / max(linked_frac, 1e-9), 0.5)
    intercept = _calibrate_intercept(raw, target)
    p = _sigmoid(raw + intercept)
    causes_incident = rng.random(n) < p

    # Weakly informative rule-factor fields.
    def noisy_level(signal, levels, cuts, noise_sd):
        vals = signal + rng.normal(0, noise_sd, n)
        out = np.full(n, levels[0], dtype=object)
        for level, cut in zip(levels[1:], cuts):
            out[vals > cut] = level
        return out

    scope = noisy_level(z_text + 0.3 * cat_eff, ["single", "few", "many"], [-0.4, 2.4], 4.0)
    complexity = noisy_level(z_text, ["low", "medium", "high"], [-0.6, 2.2], 4.0)
    history = noisy_level(
        config.team_signal * reliability[product_idx], ["none", "some", "frequent"], [-0.4, 2.0], 4.0
    )
    recoverability = noisy_level(z_text, ["easy", "moderate", "hard"], [0.0, 2.6], 5.0)

    ratings = np.asarray(["low", "medium", "high"])
    conf_r = ratings[rng.integers(0, 3, n)]
    integ_r = ratings[rng.integers(0, 3, n)]
    avail_r = ratings[rng.integers(0, 3, n)]
    sox = rng.random(n) < 0.2
    impacted = rng.poisson(1 + 3 * _sigmoid(z_text), n)
    outage = np.exp(rng.normal(3.0 + 0.4 * z_text, 1.0, n)).round(1)

    tokens_risky = np.asarray(RISKY_TOKENS)
    tokens_safe = np.asarray(SAFE_TOKENS)

    changes: list[ChangeTicket] = []
    groups = [f"GRP{i:02d}" for i in range(60)]
    owners = [f"owner-{i:02d}" for i in range(50)]
    offerings = [f"offering-{i:02d}" for i in range(12)]
    cabs = [f"cab-{i}" for i in range(8)]
    cfg_groups = [f"cfg-{i:02d}" for i in range(15)]
    grp_idx = _choice_str(rng, groups, n)
    own_idx = _choice_str(rng, owners, n)
    off_idx = _choice_str(rng, offerings, n)
    cab_idx = _choice_str(rng, cabs, n)
    cfg_idx = _choice_str(rng, cfg_groups, n)

    miss = rng.random((n, 6))
    flags = rng.random((n, 3)) < 0.6

    for i in range(n):
        start = t0 + timedelta(seconds=float(start_secs[i]))
        end = start + timedelta(minutes=float(duration_min[i]))
        filler = _choice_str(rng, FILLER_TOKENS, 6)
        words_short = filler[:3] + list(tokens_risky[: 0])
        r_toks = list(rng.choice(tokens_risky, risky_count[i], replace=False)) if risky_count[i] else []
        s_toks = list(rng.choice(tokens_safe, safe_count[i], replace=False)) if safe_count[i] else []
        short = " ".join(words_short + r_toks[:2] + s_toks[:2])
        full = " ".join(filler + r_toks + s_toks + _choice_str(rng, FILLER_TOKENS, 8))
        changes.append(
            ChangeTicket(
                id=f"CHG{i + 1:07d}",
                start_time=start,
                end_time=end,
                short_description=short,
                full_description=full,
                ci_name=ci_pool[ci_idx[i]],
                ci_config_group=cfg_idx[i],
                ci_owner=own_idx[i],
                assignment_group=grp_idx[i],
                support_offerings=off_idx[i],
                cab_approval_group=cab_idx[i],
                it_product=products[product_idx[i]] if has_product[i] else None,
                confidentiality_rating=str(conf_r[i]),
                integrity_rating=str(integ_r[i]),
                availability_rating=str(avail_r[i]) if miss[i, 0] > 0.1 else None,
                sox_critical=bool(sox[i]) if miss[i, 1] > 0.1 else None,
                automated_deployment=bool(flags[i, 0]) if miss[i, 2] > 0.2 else None,
                fallback_available=bool(flags[i, 1]) if miss[i, 3] > 0.2 else None,
                redundant_architecture=bool(flags[i, 2]) if miss[i, 4] > 0.2 else None,
                change_category=str(categories[i]),
                change_state="closed",
                impacted_services=int(impacted[i]) if miss[i, 5] > 0.15 else None,
                outage_total_duration=float(outage[i]) if miss[i, 5] > 0.3 else None,
                closure_code="failed" if causes_incident[i] and miss[i, 0] > 0.5 else "successful",
                baseline_inputs={
                    "impacted_scope": str(scope[i]),
                    "deployment_complexity": str(complexity[i]),
                    "incident_history": str(history[i]),
                    "recoverability": str(recoverability[i]),
                },
            )
        )

    # Incidents for incident-inducing changes.
    incidents: list[IncidentTicket] = []
    mix = np.asarray(config.priority_mix, dtype=float)
    mix = mix / mix.sum()
    prio_names = np.asarray(["P0_major", "P1", "P2"])
    inc_counter = 0
    for i in np.nonzero(causes_incident)[0]:
        chg = changes[i]
        n_inc = 1 + rng.poisson(0.3)
        mode = rng.random()
        for _ in range(n_inc):
            inc_counter += 1
            prio = prio_names[rng.choice(3, p=mix)]
            opened = chg.start_time + timedelta(
                minutes=float(duration_min[i]) * float(rng.uniform(0.2, 1.5))
            )
            if mode < config.caused_by_fraction:
                caused, solution = chg.id, "post incident review completed"
            elif mode < config.caused_by_fraction + config.solution_mention_fraction:
                caused, solution = None, f"service restored after rollback of {chg.id}"
            else:  # unlinked noise: tests the linkage path
                caused, solution = None, "root cause unknown"
            incidents.append(
                IncidentTicket(
                    id=f"INC{inc_counter:07d}",
                    priority=str(prio),
                    opened_at=opened,
                    closure_code="Solved",
                    caused_by_change=caused,
                    solution_text=solution,
                )
            )
    # Background incidents unrelated to changes; some carry irrelevant
    # closure codes and are dropped by the corpus filter.
    n_bg = max(1, n // 50)
    bg_open = rng.uniform(0, span, n_bg)
    bg_irrelevant = rng.random(n_bg) < 0.3
    for j in range(n_bg):
        inc_counter += 1
        incidents.append(
            IncidentTicket(
                id=f"INC{inc_counter:07d}",
                priority=str(prio_names[rng.choice(3, p=mix)]),
                opened_at=t0 + timedelta(seconds=float(bg_open[j])),
                closure_code="Invalid event" if bg_irrelevant[j] else "Solved",
                caused_by_change=None,
                solution_text="standalone operational issue",
            )
        )

    # Releases: weekly-ish per product; success odds follow team reliability.
    releases: list[ReleaseRecord] = []
    rel_counter = 0
    n_weeks = int(span // (7 * 86400))
    for pi, product in enumerate(products):
        offsets = rng.uniform(0, 7 * 86400, n_weeks)
        ok_draw = rng.random(n_weeks)
        out_draw = rng.random(n_weeks)
        for wk in range(n_weeks):
            rel_counter += 1
            start = t0 + timedelta(seconds=wk * 7 * 86400 + float(offsets[wk]))
            p_ok = _sigmoid(1.2 + 1.2 * config.team_signal * reliability[pi])
            if ok_draw[wk] < p_ok:
                outcome = "success"
            else:
                outcome = "partial_success" if out_draw[wk] < 0.5 else "failure"
            releases.append(
                ReleaseRecord(
                    id=f"REL{rel_counter:06d}",
                    it_product=product,
                    start_time=start,
                    end_time=start + timedelta(hours=2),
                    outcome=outcome,
                    po_approved=bool(ok_draw[wk] < 0.9),
                    peer_reviewed=bool(out_draw[wk] < 0.8),
                )
            )

    return Corpus(changes=tuple(changes), incidents=tuple(incidents), releases=tuple(releases))

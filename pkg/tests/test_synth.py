import json

import numpy as np
import pytest

from changerisk.corpus import record_to_dict
from changerisk.linkage import build_links, enrich_caused_by
from changerisk.pipeline import label_corpus
from changerisk.synth import RISKY_TOKENS, SAFE_TOKENS, SynthConfig, synth_generate


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(SynthConfig(n_changes=4000, seed=11))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(incident_rate=0.0).validate()
        with pytest.raises(ValueError):
            SynthConfig(n_changes=0).validate()
        with pytest.raises(ValueError):
            SynthConfig(it_product_coverage=1.5).validate()


class TestShape:
    def test_counts_and_unique_ids(self, corpus):
        assert len(corpus.changes) == 4000
        assert len({c.id for c in corpus.changes}) == 4000
        assert len({i.id for i in corpus.incidents}) == len(corpus.incidents)
        assert corpus.releases

    def test_changes_inside_requested_window(self, corpus):
        from changerisk.corpus import parse_timestamp

        start = parse_timestamp("2023-01-01T00:00:00")
        end = parse_timestamp("2024-01-01T00:00:00")
        for c in corpus.changes:
            assert start <= c.start_time < end
            assert c.start_time < c.end_time

    def test_it_product_coverage_close_to_requested(self, corpus):
        covered = sum(1 for c in corpus.changes if c.it_product is not None)
        assert abs(covered / len(corpus.changes) - 0.5) < 0.05

    def test_baseline_inputs_populated(self, corpus):
        keys = {"impacted_scope", "deployment_complexity", "incident_history",
                "recoverability"}
        for c in corpus.changes[:100]:
            assert keys <= set(c.baseline_inputs)


class TestLabelStructure:
    def test_positive_rate_near_target(self, corpus):
        labels = label_corpus(corpus)
        rate = np.mean([labels.by_id[c.id].label for c in corpus.changes])
        assert rate == pytest.approx(0.024, abs=0.012)

    def test_link_source_mix(self, corpus):
        incidents = enrich_caused_by(corpus.incidents)
        links, _ = build_links(corpus.changes, incidents)
        sources = {l.source for l in links}
        assert sources == {"caused_by_field", "solution_mention"}

    def test_background_incidents_exist_unlinked(self, corpus):
        labels = label_corpus(corpus)
        linked = {l.incident_id for l in labels.links}
        assert any(i.id not in linked for i in corpus.incidents)

    def test_priority_mix_dominated_by_p2(self, corpus):
        counts = {}
        for i in corpus.incidents:
            counts[i.priority] = counts.get(i.priority, 0) + 1
        assert counts.get("P2", 0) > counts.get("P0_major", 0)


class TestPlantedSignal:
    def test_risky_text_raises_incident_rate(self, corpus):
        labels = label_corpus(corpus)
        risky, safe = [], []
        risky_set, safe_set = set(RISKY_TOKENS), set(SAFE_TOKENS)
        for c in corpus.changes:
            toks = set((c.short_description + " " + c.full_description).split())
            n_risky = len(toks & risky_set)
            n_safe = len(toks & safe_set)
            label = labels.by_id[c.id].label
            if n_risky > n_safe:
                risky.append(label)
            elif n_safe > n_risky:
                safe.append(label)
        assert len(risky) > 50 and len(safe) > 50
        assert np.mean(risky) > np.mean(safe) + 0.01

    def test_team_signal_zero_removes_product_effect(self):
        cfg = SynthConfig(n_changes=6000, seed=5, team_signal=0.0, text_signal=0.0)
        corpus = synth_generate(cfg)
        labels = label_corpus(corpus)
        by_product: dict[str, list[int]] = {}
        for c in corpus.changes:
            if c.it_product:
                by_product.setdefault(c.it_product, []).append(labels.by_id[c.id].label)
        rates = [np.mean(v) for v in by_product.values() if len(v) >= 30]
        assert np.std(rates) < 0.05


def _dump(corpus):
    return json.dumps(
        [record_to_dict(r)
         for part in (corpus.changes, corpus.incidents, corpus.releases)
         for r in part],
        sort_keys=True,
    )


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        cfg = SynthConfig(n_changes=500, seed=21)
        assert _dump(synth_generate(cfg)) == _dump(synth_generate(cfg))

    def test_different_seed_differs(self):
        a = synth_generate(SynthConfig(n_changes=500, seed=21))
        b = synth_generate(SynthConfig(n_changes=500, seed=22))
        assert _dump(a) != _dump(b)


class TestFreezePeriod:
    def test_freeze_window_has_reduced_volume(self):
        cfg = SynthConfig(n_changes=4000, seed=9,
                          freeze_period=("2023-07-01", "2023-08-01"))
        corpus = synth_generate(cfg)
        from changerisk.corpus import parse_timestamp

        lo = parse_timestamp("2023-07-01T00:00:00")
        hi = parse_timestamp("2023-08-01T00:00:00")
        in_freeze = sum(1 for c in corpus.changes if lo <= c.start_time < hi)
        # expected ~1/12 of the year if uniform; freeze should cut it well below
        assert in_freeze < 4000 / 12 * 0.5

from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changerisk.corpus import parse_timestamp
from changerisk.harness import (
    MONTH,
    BacktestResult,
    SpanTooShortError,
    WindowPlan,
    ablation_run,
    sliding_window_run,
    temporal_split,
)
from changerisk.pipeline import PipelineConfig
from changerisk.gbdt import Hyperparams
from conftest import make_change

T0 = parse_timestamp("2023-01-01T00:00:00")


def change_at(idx, dt):
    return make_change(idx, start_time=dt, end_time=dt + timedelta(hours=1))


def spread(n, span_days=365):
    step = timedelta(days=span_days) / (n - 1)
    return [change_at(i + 1, T0 + i * step) for i in range(n)]


SMALL_HP = Hyperparams(n_trees=20, learning_rate=0.2, max_depth=3, n_bins=32,
                       min_weighted_samples_per_leaf=10.0)


class TestTemporalSplit:
    def test_proportional_8_2_2(self):
        changes = spread(120)
        split = temporal_split(changes)
        total = sum(split.counts.values())
        assert total == 120
        assert split.counts["train"] == pytest.approx(80, abs=2)
        assert split.counts["validation"] == pytest.approx(20, abs=2)
        assert split.counts["test"] == pytest.approx(20, abs=2)

    def test_chronological_order_preserved(self):
        changes = spread(60)
        split = temporal_split(changes)
        assert max(c.start_time for c in split.train) < min(
            c.start_time for c in split.validation
        )
        assert max(c.start_time for c in split.validation) < min(
            c.start_time for c in split.test
        )

    def test_boundary_row_goes_to_later_slice(self):
        b1 = T0 + timedelta(days=100)
        b2 = T0 + timedelta(days=200)
        changes = spread(10, span_days=300) + [change_at(99, b1), change_at(98, b2)]
        split = temporal_split(changes, boundaries=(b1, b2))
        assert any(c.id == "CHG0000099" for c in split.validation)
        assert any(c.id == "CHG0000098" for c in split.test)

    def test_short_span_raises(self):
        with pytest.raises(SpanTooShortError, match="span_too_short"):
            temporal_split(spread(50, span_days=200))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            temporal_split([])

    @given(n=st.integers(20, 80), span=st.integers(361, 900))
    @settings(max_examples=20, deadline=None)
    def test_partition_is_exact(self, n, span):
        changes = spread(n, span_days=span)
        split = temporal_split(changes)
        ids = [c.id for c in split.train + split.validation + split.test]
        assert sorted(ids) == sorted(c.id for c in changes)
        assert len(set(ids)) == n


class TestWindowPlan:
    def test_weekly_windows_tile_the_range(self):
        plan = WindowPlan(stream_start=T0, stream_end=T0 + timedelta(days=91))
        windows = plan.windows()
        assert len(windows) == 13
        assert windows[0][0] == T0
        assert windows[-1][1] == T0 + timedelta(days=91)
        for (as_, ae), (bs, _) in zip(windows, windows[1:]):
            assert ae == bs

    def test_partial_last_window_clipped(self):
        plan = WindowPlan(stream_start=T0, stream_end=T0 + timedelta(days=10))
        windows = plan.windows()
        assert len(windows) == 2
        assert windows[1] == (T0 + timedelta(days=7), T0 + timedelta(days=10))

    def test_cutoff_on_daily_grid_not_after_window(self):
        plan = WindowPlan(stream_start=T0, stream_end=T0 + timedelta(days=30))
        ws = T0 + timedelta(days=7, hours=5)
        cutoff = plan.cutoff(ws)
        assert cutoff == T0 + timedelta(days=7)
        assert cutoff <= ws

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            WindowPlan(stream_start=T0, stream_end=T0).windows()


@pytest.fixture(scope="module")
def corpus():
    from changerisk.synth import SynthConfig, synth_generate

    return synth_generate(SynthConfig(n_changes=3000, seed=13))


@pytest.fixture(scope="module")
def result(corpus):
    t1 = max(c.start_time for c in corpus.changes)
    plan = WindowPlan(stream_start=t1 - timedelta(days=28), stream_end=t1)
    config = PipelineConfig(hyperparams=SMALL_HP, text_k=4, min_df=3)
    return sliding_window_run(corpus, plan, config)


@pytest.fixture(scope="module")
def team_corpus():
    from changerisk.synth import SynthConfig, synth_generate

    return synth_generate(SynthConfig(n_changes=3000, seed=17, team_signal=3.0))


class TestSlidingWindow:
    def test_one_report_per_window(self, result):
        assert len(result.reports) == 4
        ids = [r.window_id for r in result.reports]
        assert ids == sorted(ids)

    def test_leakage_assertions_ran(self, result):
        assert result.leakage_checks > 0

    def test_stability_summary_fields(self, result):
        assert "weighted_fbeta" in result.summary
        stats = result.summary["weighted_fbeta"]
        assert set(stats) == {"mean", "std", "n"}
        assert 0 <= stats["mean"] <= 1

    def test_save_writes_expected_files(self, result, tmp_path):
        result.save(tmp_path)
        assert (tmp_path / "summary.csv").exists()
        assert (tmp_path / "stability.json").exists()
        per_window = list(tmp_path.glob("window_*.json"))
        assert len(per_window) == len(result.reports)
        header = (tmp_path / "summary.csv").read_text().splitlines()[0]
        assert header == "window_start,precision,wR,wF2,AUC"

    def test_empty_window_yields_degenerate_report(self, corpus):
        t1 = max(c.start_time for c in corpus.changes)
        # one window fully after the data stream ends
        plan = WindowPlan(stream_start=t1 + timedelta(days=1),
                          stream_end=t1 + timedelta(days=8))
        config = PipelineConfig(hyperparams=SMALL_HP, text_k=4, min_df=3)
        result = sliding_window_run(corpus, plan, config)
        assert len(result.reports) == 1
        assert result.reports[0].degenerate


class TestAblation:
    def test_both_arms_on_covered_rows_same_split(self, team_corpus):
        config = PipelineConfig(hyperparams=SMALL_HP, text_k=4, min_df=3)
        result = ablation_run(team_corpus, config)
        covered = sum(1 for c in team_corpus.changes if c.it_product is not None)
        assert sum(result.n_rows.values()) == covered
        assert not result.with_team_features.degenerate
        assert not result.without_team_features.degenerate
        d = result.to_dict()
        assert set(d) == {"without_team_features", "with_team_features",
                          "thresholds", "n_rows"}

    def test_no_covered_rows_rejected(self):
        changes = spread(50)  # make_change defaults it_product=None
        from changerisk.corpus import Corpus

        corpus = Corpus(changes=tuple(changes), incidents=(), releases=())
        with pytest.raises(ValueError):
            ablation_run(corpus, PipelineConfig(hyperparams=SMALL_HP))

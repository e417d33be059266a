import numpy as np
import pytest

from changerisk.corpus import ChangeTicket, parse_timestamp
from changerisk.features import FeatureMatrix
from changerisk.gbdt import Forest, Hyperparams, fit
from changerisk.synth import SynthConfig, synth_generate


def make_change(idx=1, **overrides):
    """Minimal valid change ticket for unit tests."""
    fields = dict(
        id=f"CHG{idx:07d}",
        start_time=parse_timestamp("2023-05-01T10:00:00"),
        end_time=parse_timestamp("2023-05-01T12:00:00"),
        short_description="routine update",
        full_description="routine server update for the platform",
        ci_name="ci-001",
        ci_config_group="cfg-01",
        ci_owner="owner-01",
        assignment_group="GRP01",
        support_offerings="offering-01",
        cab_approval_group="cab-1",
        it_product=None,
        confidentiality_rating="low",
        integrity_rating="low",
        availability_rating=None,
        sox_critical=None,
        automated_deployment=None,
        fallback_available=None,
        redundant_architecture=None,
        change_category="standard",
        change_state="closed",
        impacted_services=None,
        outage_total_duration=None,
        closure_code="successful",
        baseline_inputs={},
    )
    fields.update(overrides)
    return ChangeTicket(**fields)


def random_matrix(rng, n_rows, n_numeric, n_categorical, n_codes=4, missing_frac=0.15):
    numeric = rng.standard_normal((n_rows, n_numeric))
    numeric[rng.random((n_rows, n_numeric)) < missing_frac] = np.nan
    categorical = rng.integers(0, n_codes, (n_rows, n_categorical)).astype(np.int32)
    categorical[rng.random((n_rows, n_categorical)) < missing_frac] = -1
    return FeatureMatrix(
        row_ids=[f"CHG{i:07d}" for i in range(n_rows)],
        numeric=numeric,
        categorical=categorical,
        schema_fingerprint="test",
    )


def random_forest(seed, n_rows=200, n_numeric=5, n_categorical=1, n_trees=3,
                  max_depth=3, weights=False):
    """Small fitted forest plus its training matrix, for attribution tests."""
    rng = np.random.default_rng(seed)
    matrix = random_matrix(rng, n_rows, n_numeric, n_categorical)
    logits = np.where(np.isnan(matrix.numeric[:, 0]), 0.0, matrix.numeric[:, 0])
    y = (logits + 0.5 * rng.standard_normal(n_rows) > 0).astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    w = rng.uniform(0.5, 3.0, n_rows) if weights else None
    hp = Hyperparams(n_trees=n_trees, learning_rate=0.3, max_depth=max_depth,
                     n_bins=16, min_weighted_samples_per_leaf=2.0)
    return fit(matrix, y, w, hp), matrix


@pytest.fixture(scope="session")
def small_corpus():
    return synth_generate(SynthConfig(n_changes=3000, seed=3))


@pytest.fixture(scope="session")
def small_labels(small_corpus):
    from changerisk.pipeline import label_corpus

    return label_corpus(small_corpus)

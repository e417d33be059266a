import asyncio
import json
import os

import httpx
import pytest
from fastapi.testclient import TestClient

from changerisk.corpus import record_to_dict, write_jsonl
from changerisk.gbdt import Hyperparams, TrainedModel
from changerisk.pipeline import PipelineConfig, fit_pipeline, label_corpus
from changerisk.service import ServiceConfig, Store, create_app, store_digest
from changerisk.synth import SynthConfig, synth_generate

SMALL_PIPELINE = PipelineConfig(
    text_k=4,
    min_df=3,
    hyperparams=Hyperparams(n_trees=20, learning_rate=0.2, max_depth=3, n_bins=32,
                            min_weighted_samples_per_leaf=10.0),
)


@pytest.fixture(scope="module")
def trained():
    corpus = synth_generate(SynthConfig(n_changes=1500, seed=19))
    labels = label_corpus(corpus)
    changes = sorted(corpus.changes, key=lambda c: c.start_time)
    cut = int(len(changes) * 0.8)
    fitted = fit_pipeline(changes[:cut], changes[cut:], labels, SMALL_PIPELINE, None)
    return corpus, fitted


def make_client(tmp_path, trained=None, activate=True, **config_overrides):
    config = ServiceConfig(data_dir=str(tmp_path / "data"), pipeline=SMALL_PIPELINE,
                           **config_overrides)
    if trained is not None:
        _, fitted = trained
        store = Store(config.data_dir)
        store.register_model(fitted.model, fitted.schema,
                             {"threshold": fitted.model.threshold})
        if activate:
            store.set_status(fitted.model.model_version, "active")
    app = create_app(config)
    return TestClient(app), config


def payloads(corpus, n=20, offset=0):
    return [record_to_dict(c) for c in corpus.changes[offset:offset + n]]


class TestConfig:
    def test_file_then_env_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"port": 9000, "data_dir": "/from-file",
                                    "band_cutoffs": [20, 70]}))
        cfg = ServiceConfig.load(path, env={"CHANGERISK_PORT": "9001",
                                            "CHANGERISK_API_TOKEN": "tok"})
        assert cfg.port == 9001
        assert cfg.data_dir == "/from-file"
        assert cfg.band_cutoffs == (20, 70)
        assert cfg.api_token == "tok"


class TestAuth:
    def test_token_required_when_configured(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained, api_token="secret")
        assert client.get("/v1/model").status_code == 401
        ok = client.get("/v1/model", headers={"x-api-token": "secret"})
        assert ok.status_code == 200


class TestScore:
    def test_no_active_model_503(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained, activate=False)
        body = payloads(trained[0], 1)[0]
        resp = client.post("/v1/score", json=body)
        assert resp.status_code == 503
        assert resp.json()["code"] == "no_active_model"

    def test_score_response_contract(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        corpus, fitted = trained
        body = payloads(corpus, 1)[0]
        resp = client.post("/v1/score", json=body)
        assert resp.status_code == 200
        out = resp.json()
        assert out["change_id"] == body["id"]
        assert 0 <= out["score"] <= 100
        assert out["band"] in {"low", "medium", "high"}
        assert out["classified_high_risk"] == (out["score"] >= fitted.model.threshold)
        assert out["model_version"] == fitted.model.model_version
        assert len(out["top_attributions"]) <= 10
        mags = [abs(t["value"]) for t in out["top_attributions"]]
        assert mags == sorted(mags, reverse=True)

    def test_invalid_payload_422_with_reason(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        body = payloads(trained[0], 1)[0]
        body["start_time"] = "not-a-timestamp"
        resp = client.post("/v1/score", json=body)
        assert resp.status_code == 422
        out = resp.json()
        assert out["code"] == "validation_failed"
        assert out["details"]["reason_code"] == "malformed_timestamp"

    def test_scoring_never_writes(self, tmp_path, trained):
        client, config = make_client(tmp_path, trained)
        client.post("/v1/changes", json={"changes": payloads(trained[0], 10)})
        before = store_digest(config.data_dir)
        for body in payloads(trained[0], 5):
            assert client.post("/v1/score", json=body).status_code == 200
        client.get("/v1/queue", params={"start": "2023-01-01", "end": "2024-01-01"})
        client.get("/v1/model")
        assert store_digest(config.data_dir) == before


class TestBulkIngest:
    def test_accepts_scores_and_dedupes(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        rows = payloads(trained[0], 15)
        first = client.post("/v1/changes", json={"changes": rows}).json()
        assert first["accepted"] == 15
        assert first["scored"] == 15
        again = client.post("/v1/changes", json={"changes": rows}).json()
        assert again["accepted"] == 0

    def test_rejections_reported(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        rows = payloads(trained[0], 2)
        rows[1] = dict(rows[1], id=None)
        out = client.post("/v1/changes", json={"changes": rows}).json()
        assert out["accepted"] == 1
        assert len(out["rejected"]) == 1
        assert out["rejected"][0]["reason_code"] == "missing_id"

    def test_body_must_be_list(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        resp = client.post("/v1/changes", json={"changes": "nope"})
        assert resp.status_code == 422


class TestQueue:
    @pytest.fixture()
    def loaded(self, tmp_path, trained):
        client, config = make_client(tmp_path, trained)
        client.post("/v1/changes", json={"changes": payloads(trained[0], 40)})
        return client, config

    def test_sorted_by_score_then_id(self, loaded):
        client, _ = loaded
        out = client.get("/v1/queue",
                         params={"start": "2023-01-01", "end": "2024-01-01"}).json()
        items = out["items"]
        assert items
        keys = [(-i["score"], i["change_id"]) for i in items]
        assert keys == sorted(keys)
        assert out["counts"]["total"] == len(items)

    def test_threshold_override_changes_flag_counts(self, loaded):
        client, _ = loaded
        base = {"start": "2023-01-01", "end": "2024-01-01"}
        all_flagged = client.get("/v1/queue", params=dict(base, threshold=0)).json()
        none_flagged = client.get("/v1/queue", params=dict(base, threshold=100)).json()
        assert all_flagged["counts"]["flagged"] == all_flagged["counts"]["total"]
        scores = [i["score"] for i in none_flagged["items"]]
        assert none_flagged["counts"]["flagged"] == sum(1 for s in scores if s >= 100)
        for item in all_flagged["items"]:
            assert item["classified_high_risk"] is True

    def test_window_filters_by_start_time(self, loaded):
        client, _ = loaded
        out = client.get("/v1/queue",
                         params={"start": "2030-01-01", "end": "2031-01-01"}).json()
        assert out["items"] == []

    def test_invalid_window_400(self, loaded):
        client, _ = loaded
        resp = client.get("/v1/queue",
                          params={"start": "2024-01-01", "end": "2023-01-01"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "invalid_window"
        resp = client.get("/v1/queue", params={"start": "garbage", "end": "2024-01-01"})
        assert resp.status_code == 400


class TestFeedback:
    @pytest.fixture()
    def loaded(self, tmp_path, trained):
        client, config = make_client(tmp_path, trained)
        client.post("/v1/changes", json={"changes": payloads(trained[0], 3)})
        return client, config

    def _event(self, trained, **kw):
        return dict({"change_id": trained[0].changes[0].id, "verdict": "useful",
                     "decision": "approve", "reviewer": "rev-1"}, **kw)

    def test_sequential_seq_and_201(self, loaded, trained):
        client, _ = loaded
        a = client.post("/v1/feedback", json=self._event(trained))
        b = client.post("/v1/feedback", json=self._event(trained, verdict="not_useful"))
        assert a.status_code == b.status_code == 201
        assert (a.json()["seq"], b.json()["seq"]) == (0, 1)

    def test_unknown_change_404(self, loaded, trained):
        client, _ = loaded
        resp = client.post("/v1/feedback",
                           json=self._event(trained, change_id="CHG9999999"))
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown_change"

    def test_bad_enum_422(self, loaded, trained):
        client, _ = loaded
        assert client.post("/v1/feedback",
                           json=self._event(trained, verdict="meh")).status_code == 422
        assert client.post("/v1/feedback",
                           json=self._event(trained, decision="defer")).status_code == 422

    def test_survives_restart(self, loaded, trained, tmp_path):
        client, config = loaded
        client.post("/v1/feedback", json=self._event(trained))
        reopened = TestClient(create_app(config))
        resp = reopened.post("/v1/feedback",
                             json=self._event(trained, verdict="not_useful"))
        assert resp.status_code == 201
        assert resp.json()["seq"] == 1


class TestModelLifecycle:
    def test_model_endpoint_reports_active_and_registry(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        out = client.get("/v1/model").json()
        assert out["active"]["model_version"] == trained[1].model.model_version
        assert out["active"]["threshold"] == trained[1].model.threshold
        assert trained[1].model.model_version in out["registry"]

    def test_retrain_registers_inactive(self, tmp_path, trained):
        corpus, _ = trained
        write_jsonl(corpus.changes, tmp_path / "changes.jsonl")
        write_jsonl(corpus.incidents, tmp_path / "incidents.jsonl")
        write_jsonl(corpus.releases, tmp_path / "releases.jsonl")
        client, _ = make_client(
            tmp_path, trained, activate=False,
            changes_path=str(tmp_path / "changes.jsonl"),
            incidents_path=str(tmp_path / "incidents.jsonl"),
            releases_path=str(tmp_path / "releases.jsonl"),
        )
        resp = client.post("/v1/model/retrain")
        assert resp.status_code == 201
        out = resp.json()
        assert out["status"] == "inactive"
        registry = client.get("/v1/model").json()["registry"]
        assert registry[out["model_version"]]["status"] == "inactive"

    def test_retrain_without_corpus_409(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        assert client.post("/v1/model/retrain").status_code == 409

    def test_activate_unknown_version_404(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained, activate=False)
        assert client.post("/v1/model/zzz/activate").status_code == 404

    def test_activate_flips_status(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained, activate=False)
        version = trained[1].model.model_version
        body = payloads(trained[0], 1)[0]
        assert client.post("/v1/score", json=body).status_code == 503
        resp = client.post(f"/v1/model/{version}/activate")
        assert resp.status_code == 200
        assert resp.json()["status"] == "active"
        assert client.post("/v1/score", json=body).status_code == 200

    def test_concurrent_activation_single_winner(self, tmp_path, trained):
        _, fitted = trained
        config = ServiceConfig(data_dir=str(tmp_path / "data"), pipeline=SMALL_PIPELINE)
        store = Store(config.data_dir)
        v1 = store.register_model(fitted.model, fitted.schema, {})
        import dataclasses

        nudged = dataclasses.replace(fitted.model.forest,
                                     base_score=fitted.model.forest.base_score + 0.01)
        other = TrainedModel.create(nudged,
                                    threshold=fitted.model.threshold,
                                    training_range=fitted.model.training_range)
        v2 = store.register_model(other, fitted.schema, {})
        assert v1 != v2
        app = create_app(config)

        async def race():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://t") as client:
                return await asyncio.gather(
                    client.post(f"/v1/model/{v1}/activate"),
                    client.post(f"/v1/model/{v2}/activate"),
                )

        responses = asyncio.run(race())
        statuses = sorted(r.status_code for r in responses)
        assert statuses == [200, 409]
        loser = next(r for r in responses if r.status_code == 409)
        assert loser.json()["code"] == "activation_conflict"
        active = Store(config.data_dir).active_version()
        winner = next(r for r in responses if r.status_code == 200)
        assert active == winner.json()["model_version"]


class TestMetricsWindows:
    def test_serves_persisted_window_reports(self, tmp_path, trained):
        client, config = make_client(tmp_path, trained)
        windows = [{"window_id": "2023-10-02", "weighted_fbeta": 0.9}]
        with open(os.path.join(config.data_dir, "windows.json"), "w") as fh:
            json.dump(windows, fh)
        assert client.get("/v1/metrics/windows").json() == {"windows": windows}

    def test_empty_when_absent(self, tmp_path, trained):
        client, _ = make_client(tmp_path, trained)
        assert client.get("/v1/metrics/windows").json() == {"windows": []}

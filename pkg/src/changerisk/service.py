"""HTTP service: scoring, explanations, ranked review queue, feedback
capture, backtest metrics, and model lifecycle.

Persistence is file-based and append-only (JSON-lines event logs plus a
model registry directory) so every served artifact is auditable. The active
model is an immutable in-memory snapshot swapped atomically; scoring and
queue reads never write.
"""

from __future__ import annotations

import asyncio
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import corpus as corpus_mod
from .corpus import ingest, load_corpus, record_to_dict
from .explain import group_collapse, top_attributions, tree_shap
from .features import FeatureSchema, TeamHistoryIndex, assemble_matrix
from .gbdt import TrainedModel, predict_score
from .harness import SpanTooShortError, temporal_split
from .pipeline import PipelineConfig, fit_pipeline, label_corpus
from .rules import risk_band

VERDICTS = {"useful", "not_useful"}
DECISIONS = {"approve", "reject", "flag"}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details=None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(message)


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: str = "./service-data"
    band_cutoffs: tuple[int, int] = (33, 59)
    api_token: str | None = None
    static_dir: str | None = None
    # corpus files for /v1/model/retrain
    changes_path: str | None = None
    incidents_path: str | None = None
    releases_path: str | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @classmethod
    def load(cls, path=None, env=None) -> "ServiceConfig":
        """Config file values overridden by CHANGERISK_* environment vars."""
        env = os.environ if env is None else env
        raw: dict = {}
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        cfg = cls(
            host=raw.get("host", cls.host),
            port=int(raw.get("port", cls.port)),
            data_dir=raw.get("data_dir", cls.data_dir),
            band_cutoffs=tuple(raw.get("band_cutoffs", (33, 59))),
            api_token=raw.get("api_token"),
            static_dir=raw.get("static_dir"),
            changes_path=raw.get("changes_path"),
            incidents_path=raw.get("incidents_path"),
            releases_path=raw.get("releases_path"),
        )
        if "pipeline" in raw:
            p = raw["pipeline"]
            cfg.pipeline = PipelineConfig(
                text_k=p.get("text_k", cfg.pipeline.text_k),
                min_df=p.get("min_df", cfg.pipeline.min_df),
                include_team_features=p.get(
                    "include_team_features", cfg.pipeline.include_team_features
                ),
                seed=p.get("seed", cfg.pipeline.seed),
            )
        for name in ("host", "data_dir", "api_token", "static_dir",
                     "changes_path", "incidents_path", "releases_path"):
            key = f"CHANGERISK_{name.upper()}"
            if key in env:
                setattr(cfg, name, env[key])
        if "CHANGERISK_PORT" in env:
            cfg.port = int(env["CHANGERISK_PORT"])
        if "CHANGERISK_BAND_CUTOFFS" in env:
            lo, hi = env["CHANGERISK_BAND_CUTOFFS"].split(",")
            cfg.band_cutoffs = (int(lo), int(hi))
        return cfg


@dataclass(frozen=True)
class ActiveModel:
    """Immutable serving snapshot: one version for scores and attributions."""

    model: TrainedModel
    schema: FeatureSchema

    @property
    def version(self) -> str:
        return self.model.model_version


def _append_durable(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _read_jsonl(path) -> list[dict]:
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class Store:
    """Append-only event logs under one directory; single writer per log."""

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        os.makedirs(self.registry_dir, exist_ok=True)
        self._lock = threading.Lock()

    @property
    def changes_log(self):
        return os.path.join(self.data_dir, "changes.jsonl")

    @property
    def scores_log(self):
        return os.path.join(self.data_dir, "scores.jsonl")

    @property
    def feedback_log(self):
        return os.path.join(self.data_dir, "feedback.jsonl")

    @property
    def windows_path(self):
        return os.path.join(self.data_dir, "windows.json")

    @property
    def registry_dir(self):
        return os.path.join(self.data_dir, "registry")

    def append_change(self, record: dict) -> None:
        with self._lock:
            _append_durable(self.changes_log, record)

    def append_score(self, record: dict) -> None:
        with self._lock:
            _append_durable(self.scores_log, record)

    def append_feedback(self, record: dict) -> int:
        with self._lock:
            seq = sum(1 for _ in open(self.feedback_log)) if os.path.exists(self.feedback_log) else 0
            record = dict(record, seq=seq)
            _append_durable(self.feedback_log, record)
            return seq

    def changes(self) -> list[dict]:
        return _read_jsonl(self.changes_log)

    def scores(self) -> list[dict]:
        return _read_jsonl(self.scores_log)

    def feedback(self) -> list[dict]:
        return _read_jsonl(self.feedback_log)

    def windows(self) -> list[dict]:
        if not os.path.exists(self.windows_path):
            return []
        with open(self.windows_path) as fh:
            return json.load(fh)

    # ---- model registry --------------------------------------------------
    def registry_entries(self) -> dict[str, dict]:
        out = {}
        for name in sorted(os.listdir(self.registry_dir)):
            meta = os.path.join(self.registry_dir, name, "meta.json")
            if os.path.exists(meta):
                with open(meta) as fh:
                    out[name] = json.load(fh)
        return out

    def register_model(self, model: TrainedModel, schema: FeatureSchema, meta: dict) -> str:
        version = model.model_version
        vdir = os.path.join(self.registry_dir, version)
        os.makedirs(vdir, exist_ok=True)
        model.save(os.path.join(vdir, "model.json"))
        schema.save(os.path.join(vdir, "schema.json"))
        with open(os.path.join(vdir, "meta.json"), "w") as fh:
            json.dump(dict(meta, status="inactive", model_version=version), fh)
        return version

    def load_model(self, version: str) -> ActiveModel:
        vdir = os.path.join(self.registry_dir, version)
        if not os.path.isdir(vdir):
            raise ApiError(404, "model_not_found", f"unknown model version {version}")
        return ActiveModel(
            model=TrainedModel.load(os.path.join(vdir, "model.json")),
            schema=FeatureSchema.load(os.path.join(vdir, "schema.json")),
        )

    def set_status(self, version: str, status: str, activated_at: str | None = None) -> None:
        meta_path = os.path.join(self.registry_dir, version, "meta.json")
        with open(meta_path) as fh:
            meta = json.load(fh)
        meta["status"] = status
        if activated_at:
            meta["activated_at"] = activated_at
        with open(meta_path, "w") as fh:
            json.dump(meta, fh)

    def active_version(self) -> str | None:
        for version, meta in self.registry_entries().items():
            if meta.get("status") == "active":
                return version
        return None


class AppState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.store = Store(config.data_dir)
        self.active: ActiveModel | None = None
        self.activation_count = 0
        self._activation_lock = threading.Lock()
        version = self.store.active_version()
        if version is not None:
            self.active = self.store.load_model(version)

    def require_active(self) -> ActiveModel:
        snapshot = self.active
        if snapshot is None:
            raise ApiError(503, "no_active_model", "no model has been activated")
        return snapshot

    def activate(self, version: str, observed_count: int) -> ActiveModel:
        """Compare-and-swap activation: fails if another activation landed
        after `observed_count` was read."""
        with self._activation_lock:
            if self.activation_count != observed_count:
                raise ApiError(
                    409, "activation_conflict",
                    "another activation completed concurrently",
                    {"active_version": self.active.version if self.active else None},
                )
            snapshot = self.store.load_model(version)
            previous = self.store.active_version()
            if previous is not None and previous != version:
                self.store.set_status(previous, "retired")
            self.store.set_status(
                version, "active", activated_at=datetime.now(timezone.utc).isoformat()
            )
            self.active = snapshot
            self.activation_count += 1
            return snapshot


def _validate_change(payload: dict):
    result = ingest([payload], "change")
    if result.rejections:
        rej = result.rejections[0]
        raise ApiError(
            422, "validation_failed", "change payload failed validation",
            {"reason_code": rej.reason_code, "excerpt": rej.raw_excerpt},
        )
    return result.records[0]


def _score_change(state: AppState, change) -> dict:
    active = state.require_active()
    matrix = assemble_matrix([change], active.schema, None)
    if matrix.n_rows == 0:
        raise ApiError(
            422, "validation_failed",
            "change lacks it_product required by the active model's features",
            {"field": "it_product"},
        )
    score = int(predict_score(active.model.forest, matrix)[0])
    attr = tree_shap(
        active.model.forest, matrix, 0,
        model_version=active.version,
        feature_names=active.schema.feature_names,
    )
    grouped = group_collapse(attr, active.schema.groups)
    top = top_attributions(grouped, k=10)
    return {
        "change_id": change.id,
        "score": score,
        "band": risk_band(score, state.config.band_cutoffs),
        "classified_high_risk": score >= active.model.threshold,
        "top_attributions": [
            {"feature": t.name, "value": t.value, "component": t.component}
            for t in top
        ],
        "base_value": attr.base_value,
        "model_version": active.version,
    }


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="changerisk", docs_url=None, redoc_url=None)
    state = AppState(config)
    app.state.changerisk = state

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "details": exc.details},
        )

    @app.middleware("http")
    async def auth(request: Request, call_next):
        if config.api_token and request.url.path.startswith("/v1"):
            if request.headers.get("x-api-token") != config.api_token:
                return JSONResponse(
                    status_code=401,
                    content={"code": "unauthorized", "message": "missing or bad token", "details": {}},
                )
        return await call_next(request)

    @app.post("/v1/score")
    async def http_score(payload: dict):
        change = _validate_change(payload)
        return _score_change(state, change)

    @app.post("/v1/changes")
    async def http_changes(payload: dict):
        rows = payload.get("changes")
        if not isinstance(rows, list):
            raise ApiError(422, "validation_failed", "body must carry a 'changes' list")
        result = ingest(rows, "change")
        known = {c["id"] for c in state.store.changes()}
        accepted, scored = 0, 0
        for change in result.records:
            if change.id in known:
                continue
            state.store.append_change(record_to_dict(change))
            accepted += 1
            if state.active is not None:
                response = _score_change(state, change)
                state.store.append_score(
                    {
                        "change_id": change.id,
                        "score": response["score"],
                        "band": response["band"],
                        "model_version": response["model_version"],
                        "start_time": change.start_time.isoformat(),
                        "scored_at": datetime.now(timezone.utc).isoformat(),
                    }
                )
                scored += 1
        return {
            "accepted": accepted,
            "scored": scored,
            "rejected": [r.to_dict() for r in result.rejections],
        }

    @app.get("/v1/queue")
    async def http_queue(start: str, end: str, threshold: int | None = None):
        try:
            ws = corpus_mod.parse_timestamp(start)
            we = corpus_mod.parse_timestamp(end)
        except ValueError as exc:
            raise ApiError(400, "invalid_window", str(exc))
        if we <= ws:
            raise ApiError(400, "invalid_window", "end must be after start")
        if threshold is not None and not (0 <= threshold <= 100):
            raise ApiError(400, "invalid_threshold", "threshold must be 0-100")
        latest: dict[str, dict] = {}
        for rec in state.store.scores():
            when = corpus_mod.parse_timestamp(rec["start_time"])
            if ws <= when < we:
                latest[rec["change_id"]] = rec
        decide_at = threshold
        if decide_at is None and state.active is not None:
            decide_at = state.active.model.threshold
        rows = sorted(latest.values(), key=lambda r: (-r["score"], r["change_id"]))
        labels = _known_labels(state)
        items = [
            {
                "change_id": r["change_id"],
                "score": r["score"],
                "band": risk_band(r["score"], config.band_cutoffs),
                "classified_high_risk": (
                    None if decide_at is None else r["score"] >= decide_at
                ),
                "label_if_known": labels.get(r["change_id"]),
                "model_version": r["model_version"],
            }
            for r in rows
        ]
        return {
            "items": items,
            "threshold": decide_at,
            "counts": {
                "total": len(items),
                "flagged": sum(1 for i in items if i["classified_high_risk"]),
            },
        }

    @app.post("/v1/feedback")
    async def http_feedback(payload: dict):
        missing = [k for k in ("change_id", "verdict", "decision", "reviewer") if not payload.get(k)]
        if missing:
            raise ApiError(422, "validation_failed", "missing feedback fields",
                           {"fields": missing})
        if payload["verdict"] not in VERDICTS:
            raise ApiError(422, "validation_failed", "bad verdict",
                           {"allowed": sorted(VERDICTS)})
        if payload["decision"] not in DECISIONS:
            raise ApiError(422, "validation_failed", "bad decision",
                           {"allowed": sorted(DECISIONS)})
        known = {c["id"] for c in state.store.changes()}
        if payload["change_id"] not in known:
            raise ApiError(404, "unknown_change", f"change {payload['change_id']} not ingested")
        event = {
            "change_id": payload["change_id"],
            "verdict": payload["verdict"],
            "decision": payload["decision"],
            "reviewer": payload["reviewer"],
            "timestamp": payload.get("timestamp")
            or datetime.now(timezone.utc).isoformat(),
            "model_version": state.active.version if state.active else None,
        }
        seq = state.store.append_feedback(event)
        return JSONResponse(status_code=201, content=dict(event, seq=seq))

    @app.get("/v1/metrics/windows")
    async def http_metrics_windows():
        return {"windows": state.store.windows()}

    @app.get("/v1/model")
    async def http_model():
        entries = state.store.registry_entries()
        active = state.active
        return {
            "active": None
            if active is None
            else {
                "model_version": active.version,
                "threshold": active.model.threshold,
                "schema_fingerprint": active.model.schema_fingerprint,
                "training_range": list(active.model.training_range),
            },
            "registry": entries,
        }

    @app.post("/v1/model/retrain")
    async def http_retrain():
        if config.changes_path is None:
            raise ApiError(409, "no_corpus", "no corpus files configured for retraining")
        corpus, _ = load_corpus(
            config.changes_path, config.incidents_path, config.releases_path
        )
        if not corpus.changes:
            raise ApiError(409, "no_corpus", "configured corpus holds no changes")
        labels = label_corpus(corpus)
        try:
            split = temporal_split(list(corpus.changes))
            train, val = split.train, split.validation
        except SpanTooShortError:
            train = sorted(corpus.changes, key=lambda c: c.start_time)
            cut = max(1, int(len(train) * 0.8))
            train, val = train[:cut], train[cut:]
        team_index = (
            TeamHistoryIndex.build(corpus, labels.links)
            if config.pipeline.include_team_features
            else None
        )
        fitted = fit_pipeline(train, val, labels, config.pipeline, team_index)
        version = state.store.register_model(
            fitted.model,
            fitted.schema,
            {
                "threshold": fitted.model.threshold,
                "training_range": list(fitted.model.training_range),
                "schema_fingerprint": fitted.model.schema_fingerprint,
            },
        )
        return JSONResponse(
            status_code=201,
            content={"model_version": version, "status": "inactive",
                     "threshold": fitted.model.threshold},
        )

    @app.post("/v1/model/{version}/activate")
    async def http_activate(version: str):
        observed = state.activation_count
        # Yield so overlapping activation requests interleave here; the
        # compare-and-swap below then admits exactly one of them.
        await asyncio.sleep(0)
        snapshot = state.activate(version, observed)
        return {
            "model_version": snapshot.version,
            "status": "active",
            "threshold": snapshot.model.threshold,
        }

    if config.static_dir and os.path.isdir(config.static_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def _known_labels(state: AppState) -> dict[str, int]:
    path = os.path.join(state.store.data_dir, "labels.jsonl")
    out = {}
    for rec in _read_jsonl(path):
        out[rec["change_id"]] = rec.get("label")
    return out


def store_digest(data_dir: str) -> str:
    """Content hash over every event log; unchanged digest == read-only."""
    import hashlib

    h = hashlib.sha256()
    for name in ("changes.jsonl", "scores.jsonl", "feedback.jsonl"):
        path = os.path.join(data_dir, name)
        h.update(name.encode())
        if os.path.exists(path):
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def run(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)

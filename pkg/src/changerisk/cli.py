"""Single entry point driving every pipeline stage from config and data
files. Each subcommand writes its artifacts under --out together with a
manifest (inputs, config, content hashes) sufficient to re-derive them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import timedelta

import numpy as np

from . import __version__, corpus as corpus_mod, linkage
from .corpus import load_corpus, record_to_dict, write_jsonl
from .explain import global_importance, group_collapse, tree_shap, write_attribution_json
from .features import (
    FeatureSchema,
    TeamHistoryIndex,
    assemble_matrix,
    fit_schema,
    load_matrix,
    save_matrix,
)
from .gbdt import FingerprintMismatchError, Hyperparams, TrainedModel, fit, predict_score
from .harness import WindowPlan, ablation_run, sliding_window_run, temporal_split
from .metrics import render_table, threshold_search
from .pipeline import (
    PipelineConfig,
    evaluate_pipeline,
    evaluate_rules,
    fit_pipeline,
    label_corpus,
)
from .rules import RuleConfig
from .synth import SynthConfig, synth_generate


class CliError(Exception):
    def __init__(self, code: str, message: str, details=None):
        self.code = code
        self.details = details or {}
        super().__init__(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path, flag: str) -> str:
    if path is None:
        raise CliError("missing_input", f"{flag} is required")
    if not os.path.exists(path):
        raise CliError("missing_input", f"input file not found: {path}", {"path": path})
    return path


def _jsonable(value):
    try:
        json.dumps(value)
        return value
    except TypeError:
        return repr(value)


def _write_manifest(out_dir, command: str, config: dict, inputs: list, outputs: list) -> None:
    config = {k: _jsonable(v) for k, v in config.items() if k != "func"}
    manifest = {
        "tool": "changerisk",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in outputs},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_corpus_args(args):
    changes = _require(args.changes, "--changes")
    corpus, rejections = load_corpus(changes, args.incidents, args.releases)
    return corpus, rejections


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "text_k", None) is not None:
        cfg.text_k = args.text_k
    if getattr(args, "min_df", None) is not None:
        cfg.min_df = args.min_df
    if getattr(args, "team_features", False):
        cfg.include_team_features = True
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "config", None):
        with open(args.config) as fh:
            raw = json.load(fh)
        for key, value in raw.items():
            if key == "hyperparams":
                cfg.hyperparams = Hyperparams.from_dict(value)
            elif hasattr(cfg, key):
                setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = SynthConfig(
        n_changes=args.n,
        seed=args.seed if args.seed is not None else SynthConfig.seed,
        incident_rate=args.incident_rate,
        text_signal=args.text_signal,
        team_signal=args.team_signal,
        it_product_coverage=args.coverage,
    )
    corpus = synth_generate(cfg)
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for name, records in (
        ("changes", corpus.changes),
        ("incidents", corpus.incidents),
        ("releases", corpus.releases),
    ):
        path = os.path.join(args.out, f"{name}.jsonl")
        write_jsonl(records, path)
        paths.append(path)
    _write_manifest(args.out, "synth", vars(args) | {"resolved": cfg.__dict__ | {
        "priority_mix": list(cfg.priority_mix)}}, [], paths)
    print(f"wrote {len(corpus.changes)} changes, {len(corpus.incidents)} incidents, "
          f"{len(corpus.releases)} releases to {args.out}")
    return 0


def cmd_ingest(args):
    corpus, rejections = _load_corpus_args(args)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for name, records in (
        ("changes", corpus.changes),
        ("incidents", corpus.incidents),
        ("releases", corpus.releases),
    ):
        path = os.path.join(args.out, f"{name}.jsonl")
        write_jsonl(records, path)
        outputs.append(path)
    rej_path = os.path.join(args.out, "rejections.jsonl")
    with open(rej_path, "w") as fh:
        for rej in rejections:
            fh.write(json.dumps(rej.to_dict()) + "\n")
    outputs.append(rej_path)
    inputs = [p for p in (args.changes, args.incidents, args.releases) if p]
    _write_manifest(args.out, "ingest", vars(args), inputs, outputs)
    print(f"accepted {len(corpus.changes)}/{len(corpus.incidents)}/{len(corpus.releases)} "
          f"(changes/incidents/releases), rejected {len(rejections)}")
    return 0


def cmd_link(args):
    corpus, _ = _load_corpus_args(args)
    labels = label_corpus(corpus)
    os.makedirs(args.out, exist_ok=True)
    links_path = os.path.join(args.out, "links.jsonl")
    labels_path = os.path.join(args.out, "labels.jsonl")
    linkage.write_links_jsonl(labels.links, links_path)
    linkage.write_labels_jsonl(labels.by_id.values(), labels_path)
    _write_manifest(
        args.out, "link", vars(args),
        [p for p in (args.changes, args.incidents) if p],
        [links_path, labels_path],
    )
    pos = sum(1 for l in labels.by_id.values() if l.label)
    print(f"{len(labels.links)} links, {pos} positive changes, "
          f"{len(labels.dangling_incidents)} dangling incident references")
    return 0


def cmd_featurize(args):
    corpus, _ = _load_corpus_args(args)
    cfg = _pipeline_config(args)
    labels = label_corpus(corpus)
    schema = fit_schema(
        list(corpus.changes),
        text_k=cfg.text_k,
        min_df=cfg.min_df,
        include_team_features=cfg.include_team_features,
        seed=cfg.seed,
    )
    team_index = (
        TeamHistoryIndex.build(corpus, labels.links)
        if cfg.include_team_features
        else None
    )
    matrix = assemble_matrix(list(corpus.changes), schema, team_index)
    os.makedirs(args.out, exist_ok=True)
    schema_path = os.path.join(args.out, "schema.json")
    matrix_path = os.path.join(args.out, "matrix.bin")
    labels_path = os.path.join(args.out, "labels.jsonl")
    schema.save(schema_path)
    save_matrix(matrix, matrix_path)
    linkage.write_labels_jsonl(labels.by_id.values(), labels_path)
    _write_manifest(
        args.out, "featurize", vars(args) | {"pipeline": cfg.to_dict()},
        [p for p in (args.changes, args.incidents, args.releases) if p],
        [schema_path, matrix_path, labels_path],
    )
    print(f"matrix {matrix.n_rows} rows x {matrix.numeric.shape[1]} numeric "
          f"+ {matrix.categorical.shape[1]} categorical, fingerprint {schema.fingerprint[:12]}")
    return 0


def _load_labels(path) -> dict[str, linkage.LabeledChange]:
    out = {}
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            out[d["change_id"]] = linkage.LabeledChange(
                change_id=d["change_id"],
                label=d["label"],
                highest_priority=d.get("highest_priority"),
                sample_weight=d["sample_weight"],
            )
    return out


def cmd_train(args):
    matrix = load_matrix(_require(args.matrix, "--matrix"))
    schema = FeatureSchema.load(_require(args.schema, "--schema"))
    if matrix.schema_fingerprint != schema.fingerprint:
        raise CliError(
            "fingerprint_mismatch",
            "matrix was built from a different schema",
            {"matrix": matrix.schema_fingerprint, "schema": schema.fingerprint},
        )
    labels = _load_labels(_require(args.labels, "--labels"))
    cfg = _pipeline_config(args)
    y = np.array([labels[r].label for r in matrix.row_ids])
    w = np.array([labels[r].sample_weight for r in matrix.row_ids])
    forest = fit(matrix, y, w if cfg.weighted_training else None, cfg.hyperparams)
    threshold = cfg.default_threshold
    if args.val_matrix:
        val = load_matrix(args.val_matrix)
        yv = np.array([labels[r].label for r in val.row_ids])
        wv = np.array([labels[r].sample_weight for r in val.row_ids])
        threshold = threshold_search(
            predict_score(forest, val), yv, wv, beta=cfg.metric.beta
        ).best_threshold
    model = TrainedModel.create(forest, threshold, (args.train_start or "", args.train_end or ""))
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.json")
    model.save(model_path)
    _write_manifest(
        args.out, "train", vars(args) | {"pipeline": cfg.to_dict()},
        [args.matrix, args.schema, args.labels] + ([args.val_matrix] if args.val_matrix else []),
        [model_path],
    )
    print(f"model {model.model_version} threshold {threshold} "
          f"final loss {forest.train_loss_curve[-1]:.6f}")
    return 0


def _load_model_schema(args):
    model = TrainedModel.load(_require(args.model, "--model"))
    schema = FeatureSchema.load(_require(args.schema, "--schema"))
    if model.schema_fingerprint != schema.fingerprint:
        raise CliError(
            "fingerprint_mismatch", "model was trained against a different schema",
            {"model": model.schema_fingerprint, "schema": schema.fingerprint},
        )
    return model, schema


def cmd_score(args):
    model, schema = _load_model_schema(args)
    corpus, _ = _load_corpus_args(args)
    team_index = None
    if schema.include_team_features:
        labels = label_corpus(corpus)
        team_index = TeamHistoryIndex.build(corpus, labels.links)
    matrix = assemble_matrix(list(corpus.changes), schema, team_index)
    scores = predict_score(model.forest, matrix)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "scores.jsonl")
    with open(path, "w") as fh:
        for rid, s in zip(matrix.row_ids, scores):
            fh.write(json.dumps({"change_id": rid, "score": int(s),
                                 "model_version": model.model_version}) + "\n")
    _write_manifest(args.out, "score", vars(args),
                    [args.model, args.schema, args.changes], [path])
    print(f"scored {matrix.n_rows} rows ({matrix.excluded_rows} excluded)")
    return 0


def cmd_explain(args):
    model, schema = _load_model_schema(args)
    corpus, _ = _load_corpus_args(args)
    team_index = None
    if schema.include_team_features:
        labels = label_corpus(corpus)
        team_index = TeamHistoryIndex.build(corpus, labels.links)
    matrix = assemble_matrix(list(corpus.changes), schema, team_index)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    if args.id:
        try:
            row = matrix.row_ids.index(args.id)
        except ValueError:
            raise CliError("unknown_change", f"change {args.id} not in corpus")
        attr = tree_shap(model.forest, matrix, row,
                         model_version=model.model_version,
                         feature_names=schema.feature_names)
        grouped = group_collapse(attr, schema.groups)
        path = os.path.join(args.out, f"attribution_{args.id}.json")
        write_attribution_json(grouped, path)
        outputs.append(path)
    else:
        report = global_importance(
            model.forest, matrix, schema.feature_names,
            groups=schema.groups, max_rows=args.max_rows, seed=args.seed or 0,
        )
        path = os.path.join(args.out, "importance.json")
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
        outputs.append(path)
    _write_manifest(args.out, "explain", vars(args),
                    [args.model, args.schema, args.changes], outputs)
    print(f"wrote {outputs[0]}")
    return 0


def cmd_evaluate(args):
    corpus, _ = _load_corpus_args(args)
    labels = label_corpus(corpus)
    rules_cfg = RuleConfig.load(_require(args.rules, "--rules")) if args.rules else RuleConfig.example()
    cfg = _pipeline_config(args)
    split = temporal_split(list(corpus.changes))
    columns = {"Baseline": evaluate_rules(rules_cfg, split.test, labels, beta=cfg.metric.beta)}
    team_index = TeamHistoryIndex.build(corpus, labels.links)
    for label, with_team in (("Model", False), ("Model+Team", True)):
        arm = replace(cfg, include_team_features=with_team)
        fitted = fit_pipeline(split.train, split.validation, labels, arm,
                              team_index if with_team else None)
        columns[label] = evaluate_pipeline(fitted, split.test, labels)
    table = render_table(columns)
    print(table)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "evaluation.json")
    with open(report_path, "w") as fh:
        json.dump({name: rep.to_dict() for name, rep in columns.items()}, fh, indent=2)
    table_path = os.path.join(args.out, "table.txt")
    with open(table_path, "w") as fh:
        fh.write(table + "\n")
    _write_manifest(args.out, "evaluate", vars(args) | {"pipeline": cfg.to_dict()},
                    [p for p in (args.changes, args.incidents, args.releases, args.rules) if p],
                    [report_path, table_path])
    return 0


def _plot_svg(reports, path) -> None:
    """Minimal per-window wR/wF2 polyline plot."""
    W, H, pad = 640, 240, 40
    usable = [r for r in reports if not r.degenerate]
    if not usable:
        return
    n = len(usable)
    xs = [pad + i * (W - 2 * pad) / max(n - 1, 1) for i in range(n)]
    def poly(vals, color):
        pts = " ".join(f"{x:.1f},{H - pad - v * (H - 2 * pad):.1f}" for x, v in zip(xs, vals))
        return f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>'
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{pad}" y1="{H-pad}" x2="{W-pad}" y2="{H-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H-pad}" stroke="black"/>',
        poly([r.weighted_recall for r in usable], "#1f77b4"),
        poly([r.weighted_fbeta for r in usable], "#ff7f0e"),
        f'<text x="{pad}" y="{pad-10}" font-size="12">wR (blue) / wF2 (orange) per window</text>',
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def cmd_backtest(args):
    corpus, _ = _load_corpus_args(args)
    cfg = _pipeline_config(args)
    end = max(c.start_time for c in corpus.changes) + timedelta(seconds=1)
    start = end - timedelta(days=7 * args.weeks)
    plan = WindowPlan(stream_start=start, stream_end=end)
    result = sliding_window_run(corpus, plan, cfg)
    os.makedirs(args.out, exist_ok=True)
    result.save(args.out)
    svg_path = os.path.join(args.out, "windows.svg")
    _plot_svg(result.reports, svg_path)
    outputs = [os.path.join(args.out, "summary.csv"), os.path.join(args.out, "stability.json")]
    if os.path.exists(svg_path):
        outputs.append(svg_path)
    _write_manifest(args.out, "backtest", vars(args) | {"pipeline": cfg.to_dict()},
                    [p for p in (args.changes, args.incidents, args.releases) if p], outputs)
    wf2 = result.summary.get("weighted_fbeta", {})
    print(f"{len(result.reports)} windows, wF2 mean {wf2.get('mean', float('nan')):.3f} "
          f"std {wf2.get('std', float('nan')):.3f}, leakage checks {result.leakage_checks}")
    return 0


def cmd_ablate(args):
    corpus, _ = _load_corpus_args(args)
    cfg = _pipeline_config(args)
    result = ablation_run(corpus, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ablation.json")
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
    _write_manifest(args.out, "ablate", vars(args) | {"pipeline": cfg.to_dict()},
                    [p for p in (args.changes, args.incidents, args.releases) if p], [path])
    print(render_table({
        "Without": result.without_team_features,
        "With": result.with_team_features,
    }))
    return 0


def cmd_serve(args):
    from .service import ServiceConfig, run

    cfg = ServiceConfig.load(args.config) if args.config else ServiceConfig.load()
    run(cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="changerisk",
        description="Change-deployment risk scoring pipeline",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_corpus_args(p):
        p.add_argument("--changes")
        p.add_argument("--incidents")
        p.add_argument("--releases")

    def add_common(p, out=True):
        if out:
            p.add_argument("--out", required=True)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--incident-rate", type=float, default=0.024)
    p.add_argument("--text-signal", type=float, default=2.5)
    p.add_argument("--team-signal", type=float, default=1.0)
    p.add_argument("--coverage", type=float, default=0.5)
    add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate raw ticket files")
    add_corpus_args(p)
    add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("link", help="link incidents to causing changes and label")
    add_corpus_args(p)
    add_common(p)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("featurize", help="fit feature schema and build the matrix")
    add_corpus_args(p)
    p.add_argument("--text-k", type=int)
    p.add_argument("--min-df", type=int)
    p.add_argument("--team-features", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train the boosted forest")
    p.add_argument("--matrix")
    p.add_argument("--schema")
    p.add_argument("--labels")
    p.add_argument("--val-matrix")
    p.add_argument("--train-start")
    p.add_argument("--train-end")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score changes with a trained model")
    p.add_argument("--model")
    p.add_argument("--schema")
    add_corpus_args(p)
    add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("explain", help="per-change attribution or global importance")
    p.add_argument("--model")
    p.add_argument("--schema")
    p.add_argument("--id")
    p.add_argument("--max-rows", type=int, default=500)
    add_corpus_args(p)
    add_common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="baseline vs model comparison table")
    add_corpus_args(p)
    p.add_argument("--rules")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("backtest", help="sliding-window retrain-and-predict run")
    add_corpus_args(p)
    p.add_argument("--weeks", type=int, default=13)
    add_common(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("ablate", help="with/without team-feature paired runs")
    add_corpus_args(p)
    add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"code": exc.code, "message": str(exc), "details": exc.details}),
              file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"code": "missing_input", "message": str(exc),
                          "details": {"path": exc.filename}}), file=sys.stderr)
        return 2
    except (FingerprintMismatchError,) as exc:
        print(json.dumps({"code": "fingerprint_mismatch", "message": str(exc), "details": {}}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

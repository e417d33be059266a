#!/usr/bin/env python3
"""Benchmark the learned pipeline against the rule baseline.

Generates the default synthetic corpus (20k changes, one simulated year),
splits it chronologically 8/2/2, and prints the comparison table:
rule baseline vs the boosted model, with and without team-history features.

Usage:
    python3 scripts/run_benchmark.py [--n 20000] [--seed 7] [--out results/benchmark]
"""

import argparse
import json
import os
from dataclasses import replace

from changerisk.harness import temporal_split
from changerisk.metrics import render_table
from changerisk.pipeline import (
    PipelineConfig,
    evaluate_pipeline,
    evaluate_rules,
    fit_pipeline,
    label_corpus,
)
from changerisk.features import TeamHistoryIndex
from changerisk.rules import RuleConfig
from changerisk.synth import SynthConfig, synth_generate


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default="results/benchmark")
    args = parser.parse_args()

    corpus = synth_generate(SynthConfig(n_changes=args.n, seed=args.seed))
    labels = label_corpus(corpus)
    split = temporal_split(list(corpus.changes))
    print(f"split counts: {split.counts}")

    config = PipelineConfig()
    columns = {
        "Baseline": evaluate_rules(RuleConfig.example(), split.test, labels),
    }
    team_index = TeamHistoryIndex.build(corpus, labels.links)
    for name, with_team in (("Model", False), ("Model+Team", True)):
        arm = replace(config, include_team_features=with_team)
        fitted = fit_pipeline(split.train, split.validation, labels, arm,
                              team_index if with_team else None)
        columns[name] = evaluate_pipeline(fitted, split.test, labels)

    table = render_table(columns)
    print(table)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "benchmark.json"), "w") as fh:
        json.dump({name: rep.to_dict() for name, rep in columns.items()}, fh, indent=2)
    with open(os.path.join(args.out, "table.txt"), "w") as fh:
        fh.write(table + "\n")
    print(f"artifacts written to {args.out}")


if __name__ == "__main__":
    main()

"""Command-line entry point.

Subcommands cover the full workflow: synth, ingest, summarize, tournament,
select-features, subsample, embed, evaluate, table1, and report. Most take
a JSON experiment config (see ``ExperimentConfig``); outputs land in a run
directory named by the config hash. The worker count can be overridden with
the QRCMOL_WORKERS environment variable. Exit status is nonzero on failure,
with a stage tag in the message.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import embedding, feature_select, pipeline, report, subsample
from .dataset import CsvSchema, generate_synthetic, load_csv, standardize, summarize
from .pipeline import ExperimentConfig, PipelineError, derive_seed
from .reservoir import ReservoirConfig


def _load_config(path, workers_override=None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json_file(path)
    env_workers = os.environ.get("QRCMOL_WORKERS")
    if workers_override is not None:
        cfg.workers = workers_override
    elif env_workers:
        cfg.workers = int(env_workers)
    return cfg


def _schema_from_args(args) -> CsvSchema:
    return CsvSchema(
        id_column=args.id_column,
        target_column=args.target_column,
        feature_prefix=args.feature_prefix,
    )


def _write_dataset_csv(dataset, path, schema: CsvSchema | None = None) -> None:
    schema = schema or CsvSchema()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.id_column, schema.target_column] + dataset.feature_names)
        for rid, t, row in zip(dataset.record_ids, dataset.target, dataset.features):
            writer.writerow([rid, repr(float(t))] + [repr(float(v)) for v in row])


def cmd_synth(args) -> int:
    dataset = generate_synthetic(
        n_records=args.n_records,
        n_features=args.n_features,
        relation=args.relation,
        noise_sd=args.noise_sd,
        seed=args.seed,
    )
    _write_dataset_csv(dataset, args.out)
    print(f"wrote {dataset.n_records} x {dataset.n_features} synthetic records to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    dataset = load_csv(args.csv, _schema_from_args(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_dataset_csv(dataset, out, _schema_from_args(args))
    print(f"cleaned dataset: {dataset.n_records} records, {dataset.n_features} features -> {out}")
    return 0


def cmd_summarize(args) -> int:
    dataset = load_csv(args.csv, _schema_from_args(args))
    summary = summarize(dataset)
    doc = {
        "n_records": summary.n_records,
        "n_features": summary.n_features,
        "features": [
            {
                "name": dataset.feature_names[j],
                "missing": int(summary.missing_count[j]),
                "min": float(summary.minimum[j]),
                "max": float(summary.maximum[j]),
                "skew": float(summary.skew[j]),
                "kurtosis": None if np.isnan(summary.kurtosis[j]) else float(summary.kurtosis[j]),
                "constant": bool(summary.constant_mask[j]),
            }
            for j in range(summary.n_features)
        ],
    }
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"summary written to {args.out}")
    else:
        print(text)
    return 0


def cmd_tournament(args) -> int:
    cfg = _load_config(args.config)
    dataset = pipeline.load_dataset(cfg)
    winner, table = pipeline.run_candidate_tournament(
        dataset, cfg.tournament_models, cfg.test_fraction, cfg.seed
    )
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    pipeline._write_tournament_csv(out / "tournament.csv", table)
    for row in sorted(table, key=lambda r: r["mse"]):
        print(f"{row['kind']:>14}: MSE {row['mse']:.6g}")
    print(f"winner: {winner.kind}")
    return 0


def cmd_select_features(args) -> int:
    cfg = _load_config(args.config)
    dataset = pipeline.load_dataset(cfg)
    winner, _ = pipeline.run_candidate_tournament(
        dataset, cfg.tournament_models, cfg.test_fraction, cfg.seed
    )
    selected, ranking = pipeline.shap_feature_selection(dataset, winner, cfg)
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    ranking.to_csv(out / "shap_ranking.csv", feature_names=dataset.feature_names)
    (out / "selected_features.json").write_text(
        json.dumps({"indices": selected,
                    "names": [dataset.feature_names[i] for i in selected]}, sort_keys=True),
        encoding="utf-8",
    )
    print(f"selected {len(selected)} features: {[dataset.feature_names[i] for i in selected]}")
    return 0


def cmd_subsample(args) -> int:
    cfg = _load_config(args.config)
    dataset = pipeline.load_dataset(cfg)
    std, _ = standardize(dataset)
    _model, assignments = subsample.kmeans(
        std.features, min(cfg.n_clusters, std.n_records),
        seed=derive_seed(cfg.seed, "kmeans"),
    )
    out = cfg.run_dir() / "plans"
    out.mkdir(parents=True, exist_ok=True)
    for size in cfg.subsample_sizes:
        plan = subsample.make_subsamples(
            assignments, cfg.n_subsamples, size,
            seed=derive_seed(cfg.seed, f"plan_size{size}"),
            allow_shortfall=cfg.allow_shortfall,
        )
        path = out / f"size{size}.json"
        path.write_text(plan.to_json(record_ids=std.record_ids), encoding="utf-8")
        print(f"size {size}: {len(plan.subsamples)} subsamples -> {path}")
    return 0


def cmd_embed(args) -> int:
    cfg = _load_config(args.config, workers_override=args.workers)
    dataset = pipeline.load_dataset(cfg)
    std, _ = standardize(dataset)
    res_config = pipeline._reservoir_for(cfg, std.n_features)
    scaler = embedding.fit_scaler(std.features)
    emb = embedding.embed_dataset(res_config, scaler, std, args.mode, workers=cfg.workers)
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    emb.to_csv(out / f"embedding_{args.mode}.csv")
    emb.write_sidecar(out / f"embedding_{args.mode}_meta.json", res_config, scaler)
    print(f"embedded {std.n_records} records into {emb.values.shape[1]} columns ({args.mode})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config, workers_override=args.workers)
    result = pipeline.run_pipeline(cfg)
    print(f"run directory: {cfg.run_dir()}")
    for row in result.rows:
        print(
            f"{row.mode:>14} {row.model_kind:>14} size={row.subsample_size:<5}"
            f" MSE {row.mse_mean:.6g} +/- {row.mse_std:.6g} (n={row.n_subsamples})"
        )
    return 0


def cmd_table1(args) -> int:
    cfg = _load_config(args.config, workers_override=args.workers)
    result = pipeline.run_table1_task(cfg)
    print(f"run directory: {cfg.run_dir()}")
    for row in result.rows:
        print(
            f"{row.mode:>14} {row.metric:>9} size={row.subsample_size:<5}"
            f" {row.mean:.3f} +/- {row.std:.3f}"
        )
    return 0


def cmd_report(args) -> int:
    written = report.render_run(args.run_dir)
    if not written:
        print(f"no report files found under {args.run_dir}", file=sys.stderr)
        return 1
    for path in written:
        print(f"figure written: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrcmol",
        description="Quantum-reservoir embeddings and model evaluation for molecular activity data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic descriptor CSV")
    p.add_argument("--n-records", type=int, required=True)
    p.add_argument("--n-features", type=int, required=True)
    p.add_argument("--relation", choices=["linear", "nonlinear"], default="nonlinear")
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for name, func, needs_out in (
        ("ingest", cmd_ingest, True),
        ("summarize", cmd_summarize, False),
    ):
        p = sub.add_parser(name, help=f"{name} a descriptor CSV")
        p.add_argument("--csv", required=True)
        p.add_argument("--id-column", default="MOLECULE")
        p.add_argument("--target-column", default="Act")
        p.add_argument("--feature-prefix", default=None)
        if needs_out:
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--out", default=None)
        p.set_defaults(func=func)

    for name, func, with_workers in (
        ("tournament", cmd_tournament, False),
        ("select-features", cmd_select_features, False),
        ("subsample", cmd_subsample, False),
        ("evaluate", cmd_evaluate, True),
        ("table1", cmd_table1, True),
    ):
        p = sub.add_parser(name, help=f"run the {name} stage from a config")
        p.add_argument("--config", required=True)
        if with_workers:
            p.add_argument("--workers", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("embed", help="embed a whole dataset (scaler fit on all rows)")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=list(embedding.MODES), default=embedding.TWO_BODY)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("report", help="render figures from a run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

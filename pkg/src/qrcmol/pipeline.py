"""End-to-end experiment orchestration.

Workflow: ingest -> standardize -> candidate-model tournament -> SHAP top-k
feature selection on the winner -> k-means cluster subsampling -> per
subsample: stratified split, per embedding mode (raw standardized features
or reservoir embeddings), model training and test MSE -> aggregation into a
mean/std report per (mode, model, subsample size).

Every random choice draws from a seed derived from the master seed and a
stable component label, so runs are reproducible and component seeds are
independent of unrelated config changes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, embedding, feature_select, regressors, subsample
from .dataset import (
    CsvSchema,
    MolecularDataset,
    generate_synthetic,
    load_csv,
    standardize,
)
from .embedding import ONE_BODY, TWO_BODY
from .regressors import RegressorSpec, mse, predict, train
from .reservoir import ReservoirConfig

CONFIG_VERSION = 1

CLASSICAL_RAW = "classical_raw"
QRC_ONE_BODY = "qrc_one_body"
QRC_TWO_BODY = "qrc_two_body"
ALL_MODES = (CLASSICAL_RAW, QRC_ONE_BODY, QRC_TWO_BODY)

# precedence used to break tournament ties (earlier wins)
MODEL_ORDER = ("random_forest", "gp_rbf", "cart", "knn", "linear")


class PipelineError(RuntimeError):
    """Stage-tagged pipeline failure."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def derive_seed(master_seed: int, label: str) -> int:
    """Stable per-component seed: SHA-256 of 'master:label', truncated."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def aggregate(per_subsample_mses) -> tuple[float, float]:
    """Mean and population standard deviation of per-subsample metrics."""
    values = np.asarray(list(per_subsample_mses), dtype=float)
    if values.size == 0:
        raise PipelineError("aggregate", "cannot aggregate an empty list")
    return float(values.mean()), float(values.std())


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset_tag: str = "dataset"
    csv_path: str | None = None
    schema: CsvSchema = field(default_factory=CsvSchema)
    synthetic: dict | None = None          # generate_synthetic kwargs
    reservoir: dict = field(default_factory=dict)  # ReservoirConfig overrides (n_atoms implied)
    modes: tuple = (CLASSICAL_RAW, QRC_ONE_BODY, QRC_TWO_BODY)
    models: list[RegressorSpec] = field(
        default_factory=lambda: [RegressorSpec("random_forest"), RegressorSpec("gp_rbf")]
    )
    tournament_models: list[RegressorSpec] = field(
        default_factory=lambda: [RegressorSpec(k) for k in MODEL_ORDER]
    )
    top_k: int = 18
    shap_background_size: int = 25
    shap_n_coalitions: int | None = None    # default: exhaustive for small d, else 2048
    shap_n_explained: int | None = None     # default: all training records
    subsample_sizes: tuple = (100, 200, 800)
    n_subsamples: int = 5
    n_clusters: int = 5
    test_fraction: float = 0.25
    allow_shortfall: bool = False
    svm_kernel: str = "rbf"
    svm_C: float = 1.0
    output_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        for mode in self.modes:
            if mode not in ALL_MODES:
                raise PipelineError("config", f"unknown embedding mode {mode!r}")
        if self.csv_path is None and self.synthetic is None:
            raise PipelineError("config", "config needs either csv_path or synthetic")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "dataset_tag": self.dataset_tag,
            "csv_path": self.csv_path,
            "schema": {
                "id_column": self.schema.id_column,
                "target_column": self.schema.target_column,
                "feature_prefix": self.schema.feature_prefix,
            },
            "synthetic": self.synthetic,
            "reservoir": self.reservoir,
            "modes": list(self.modes),
            "models": [{"kind": s.kind, "hyperparams": s.hyperparams} for s in self.models],
            "tournament_models": [
                {"kind": s.kind, "hyperparams": s.hyperparams} for s in self.tournament_models
            ],
            "top_k": self.top_k,
            "shap_background_size": self.shap_background_size,
            "shap_n_coalitions": self.shap_n_coalitions,
            "shap_n_explained": self.shap_n_explained,
            "subsample_sizes": list(self.subsample_sizes),
            "n_subsamples": self.n_subsamples,
            "n_clusters": self.n_clusters,
            "test_fraction": self.test_fraction,
            "allow_shortfall": self.allow_shortfall,
            "svm_kernel": self.svm_kernel,
            "svm_C": self.svm_C,
            "output_dir": self.output_dir,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        version = doc.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise PipelineError("config", f"unsupported config version {version}")
        schema = CsvSchema(**doc.pop("schema", {}))
        models = [RegressorSpec(**m) for m in doc.pop("models", [])] or None
        tmodels = [RegressorSpec(**m) for m in doc.pop("tournament_models", [])] or None
        for key in ("modes", "subsample_sizes"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        kwargs = {k: v for k, v in doc.items() if v is not None or k in ("csv_path", "synthetic")}
        cfg = cls(schema=schema, **kwargs)
        if models:
            cfg.models = models
        if tmodels:
            cfg.tournament_models = tmodels
        return cfg

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.config_hash()


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class ReportRow:
    dataset_tag: str
    mode: str
    model_kind: str
    subsample_size: int
    n_subsamples: int
    mse_mean: float
    mse_std: float
    per_subsample: list[float]


@dataclass
class EvaluationReport:
    rows: list[ReportRow]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["dataset_tag", "mode", "model", "subsample_size", "n_subsamples",
                 "mse_mean", "mse_std", "per_subsample_mses"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.dataset_tag, r.mode, r.model_kind, r.subsample_size, r.n_subsamples,
                     repr(r.mse_mean), repr(r.mse_std),
                     "|".join(repr(v) for v in r.per_subsample)]
                )

    def to_json(self) -> str:
        return json.dumps([r.__dict__ for r in self.rows], sort_keys=True, indent=1)


@dataclass
class Table1Row:
    mode: str
    metric: str
    subsample_size: int
    mean: float
    std: float


@dataclass
class Table1Report:
    rows: list[Table1Row]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mode", "metric", "subsample_size", "mean", "std"])
            for r in self.rows:
                writer.writerow([r.mode, r.metric, r.subsample_size, repr(r.mean), repr(r.std)])

    def to_json(self) -> str:
        return json.dumps([r.__dict__ for r in self.rows], sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def load_dataset(config: ExperimentConfig) -> MolecularDataset:
    try:
        if config.csv_path is not None:
            return load_csv(config.csv_path, config.schema)
        return generate_synthetic(seed=config.seed, **config.synthetic)
    except Exception as exc:
        raise PipelineError("ingest", str(exc)) from exc


def run_candidate_tournament(
    dataset: MolecularDataset,
    specs: list[RegressorSpec],
    test_fraction: float,
    seed: int,
) -> tuple[RegressorSpec, list[dict]]:
    """Fit every candidate on standardized raw features and rank by test MSE.

    Ties are broken by the fixed model-order precedence, then by position
    in ``specs``.
    """
    if not specs:
        raise PipelineError("tournament", "no candidate models configured")
    from .dataset import apply_standardization, train_test_split

    train_ds, test_ds = train_test_split(dataset, test_fraction, seed=derive_seed(seed, "tournament_split"))
    # scaling fitted on the training rows only to avoid leakage
    train_std, fit_params = standardize(train_ds)
    test_std = apply_standardization(fit_params, test_ds)

    table = []
    for pos, spec in enumerate(specs):
        model = train(spec, train_std.features, train_std.target,
                      seed=derive_seed(seed, f"tournament_model_{spec.kind}"))
        err = mse(predict(model, test_std.features), test_std.target)
        table.append({"kind": spec.kind, "mse": err, "position": pos})
    order_rank = {k: i for i, k in enumerate(MODEL_ORDER)}
    best = min(table, key=lambda r: (r["mse"], order_rank.get(r["kind"], len(MODEL_ORDER)), r["position"]))
    best_spec = specs[best["position"]]
    return best_spec, table


def shap_feature_selection(
    dataset: MolecularDataset,
    winner_spec: RegressorSpec,
    config: ExperimentConfig,
) -> tuple[list[int], feature_select.FeatureRanking]:
    """Rank features by mean |SHAP| under the tournament winner; keep top k."""
    seed = derive_seed(config.seed, "shap")
    std_ds, _ = standardize(dataset)
    model = train(winner_spec, std_ds.features, std_ds.target, seed=derive_seed(config.seed, "shap_model"))

    n_bg = min(config.shap_background_size, std_ds.n_records)
    if n_bg < std_ds.n_records:
        cluster_model, _assign = subsample.kmeans(std_ds.features, n_bg, seed=derive_seed(config.seed, "shap_background"))
        background = cluster_model.centroids
    else:
        background = std_ds.features

    d = std_ds.n_features
    budget = config.shap_n_coalitions
    if budget is None:
        budget = 2**d - 2 if d <= 11 else 2048
    budget = max(budget, 2 * d + 2)
    shap_cfg = feature_select.ShapConfig(
        background=background, n_coalitions=budget, seed=seed
    )

    n_explain = config.shap_n_explained or std_ds.n_records
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 0xE1]))
    if n_explain < std_ds.n_records:
        explain_rows = np.sort(rng.choice(std_ds.n_records, size=n_explain, replace=False))
    else:
        explain_rows = np.arange(std_ds.n_records)
    attributions = [
        feature_select.kernel_shap(model, std_ds.features[r], shap_cfg) for r in explain_rows
    ]
    ranking = feature_select.rank_features(attributions)
    k = min(config.top_k, d)
    return feature_select.select_top_k(ranking, k), ranking


def _reservoir_for(config: ExperimentConfig, n_atoms: int) -> ReservoirConfig:
    overrides = dict(config.reservoir)
    overrides.pop("n_atoms", None)
    return ReservoirConfig(n_atoms=n_atoms, **overrides)


def _mode_matrices(
    mode: str,
    features: np.ndarray,
    train_idx_rel: np.ndarray,
    test_idx_rel: np.ndarray,
    res_config: ReservoirConfig,
    record_ids: list[str],
    workers: int,
):
    """Train/test design matrices for one embedding mode.

    Reservoir scalers are always fit on the training rows only. Both QRC
    modes share one simulation: one-body columns are the prefix of the
    two-body layout.
    """
    if mode == CLASSICAL_RAW:
        return features[train_idx_rel], features[test_idx_rel], None, None

    scaler = embedding.fit_scaler(features[train_idx_rel])
    ds = MolecularDataset(
        record_ids=[record_ids[i] for i in np.concatenate([train_idx_rel, test_idx_rel])],
        features=features[np.concatenate([train_idx_rel, test_idx_rel])],
        feature_names=[f"f{j}" for j in range(features.shape[1])],
        target=np.zeros(len(train_idx_rel) + len(test_idx_rel)),
    )
    emb_mode = TWO_BODY if mode == QRC_TWO_BODY else ONE_BODY
    emb = embedding.embed_dataset(res_config, scaler, ds, emb_mode, workers=workers)
    n_train = len(train_idx_rel)
    return emb.values[:n_train], emb.values[n_train:], scaler, emb


def run_pipeline(config: ExperimentConfig) -> EvaluationReport:
    """Execute the full workflow and write all artifacts to the run directory."""
    t_start = time.time()
    out = config.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=1), encoding="utf-8"
    )
    timings: dict[str, float] = {}

    dataset = load_dataset(config)
    timings["ingest"] = time.time() - t_start

    try:
        std_full, std_params = standardize(dataset)
    except Exception as exc:
        raise PipelineError("standardize", str(exc)) from exc
    (out / "standardization.json").write_text(std_params.to_json(), encoding="utf-8")

    t0 = time.time()
    try:
        winner, table = run_candidate_tournament(
            dataset, config.tournament_models, config.test_fraction, config.seed
        )
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("tournament", str(exc)) from exc
    _write_tournament_csv(out / "tournament.csv", table)
    timings["tournament"] = time.time() - t0

    t0 = time.time()
    try:
        selected, ranking = shap_feature_selection(dataset, winner, config)
    except Exception as exc:
        raise PipelineError("select-features", str(exc)) from exc
    ranking.to_csv(out / "shap_ranking.csv", feature_names=dataset.feature_names)
    (out / "selected_features.json").write_text(
        json.dumps({"indices": selected, "names": [dataset.feature_names[i] for i in selected]},
                   sort_keys=True),
        encoding="utf-8",
    )
    timings["select-features"] = time.time() - t0

    reduced = std_full.select_features(selected)
    res_config = _reservoir_for(config, reduced.n_features)
    needs_qrc = any(m != CLASSICAL_RAW for m in config.modes)

    t0 = time.time()
    try:
        _cluster_model, assignments = subsample.kmeans(
            reduced.features, min(config.n_clusters, reduced.n_records),
            seed=derive_seed(config.seed, "kmeans"),
        )
    except Exception as exc:
        raise PipelineError("subsample", str(exc)) from exc

    plans: dict[int, subsample.SubsamplePlan] = {}
    for size in config.subsample_sizes:
        try:
            with warnings.catch_warnings():
                if config.allow_shortfall:
                    warnings.simplefilter("ignore")
                plan = subsample.make_subsamples(
                    assignments, config.n_subsamples, size,
                    seed=derive_seed(config.seed, f"plan_size{size}"),
                    allow_shortfall=config.allow_shortfall,
                )
        except Exception as exc:
            raise PipelineError("subsample", str(exc)) from exc
        # subsamples too small to split and train are dropped from the plan
        plan.subsamples = [s for s in plan.subsamples if len(s) >= 8]
        plans[size] = plan
    plans_dir = out / "plans"
    plans_dir.mkdir(exist_ok=True)
    for size, plan in plans.items():
        (plans_dir / f"size{size}.json").write_text(
            plan.to_json(record_ids=reduced.record_ids), encoding="utf-8"
        )
    timings["subsample"] = time.time() - t0

    t0 = time.time()
    rows: list[ReportRow] = []
    artifacts_dir = out / "subsamples"
    artifacts_dir.mkdir(exist_ok=True)
    mses: dict[tuple[str, str, int], list[float]] = {
        (mode, spec.kind, size): []
        for mode in config.modes for spec in config.models for size in config.subsample_sizes
    }
    try:
        for size, plan in plans.items():
            for s_idx, indices in enumerate(plan.subsamples):
                split_seed = derive_seed(config.seed, f"split_size{size}_s{s_idx}")
                train_abs, test_abs = subsample.stratified_split(
                    indices, assignments, config.test_fraction, seed=split_seed
                )
                sub_ids = [reduced.record_ids[i] for i in indices]
                pos = {idx: p for p, idx in enumerate(indices)}
                train_rel = np.array([pos[i] for i in train_abs], dtype=int)
                test_rel = np.array([pos[i] for i in test_abs], dtype=int)
                sub_features = reduced.features[indices]
                sub_target = reduced.target[indices]
                sub_dir = artifacts_dir / f"size{size}_s{s_idx}"
                sub_dir.mkdir(exist_ok=True)

                qrc_cache = None
                if needs_qrc:
                    qrc_train, qrc_test, scaler, emb = _mode_matrices(
                        QRC_TWO_BODY, sub_features, train_rel, test_rel,
                        res_config, sub_ids, config.workers,
                    )
                    qrc_cache = (qrc_train, qrc_test)
                    (sub_dir / "scaler.json").write_text(
                        json.dumps(scaler.to_dict(), sort_keys=True), encoding="utf-8"
                    )
                    emb.to_csv(sub_dir / "embedding_two_body.csv")
                    emb.write_sidecar(sub_dir / "embedding_meta.json", res_config, scaler)

                one_body_width = embedding.embedding_width(res_config, ONE_BODY)
                for mode in config.modes:
                    if mode == CLASSICAL_RAW:
                        X_train, X_test = sub_features[train_rel], sub_features[test_rel]
                    elif mode == QRC_TWO_BODY:
                        X_train, X_test = qrc_cache
                    else:  # one-body columns are the two-body prefix
                        X_train = qrc_cache[0][:, :one_body_width]
                        X_test = qrc_cache[1][:, :one_body_width]
                    y_train, y_test = sub_target[train_rel], sub_target[test_rel]
                    for spec in config.models:
                        model_seed = derive_seed(
                            config.seed, f"model_size{size}_s{s_idx}_{mode}_{spec.kind}"
                        )
                        model = train(spec, X_train, y_train, seed=model_seed)
                        err = mse(predict(model, X_test), y_test)
                        mses[(mode, spec.kind, size)].append(err)
                        (sub_dir / f"model_{mode}_{spec.kind}.json").write_text(
                            model.to_json(), encoding="utf-8"
                        )
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("evaluate", str(exc)) from exc
    timings["evaluate"] = time.time() - t0

    for mode in config.modes:
        for spec in config.models:
            for size in config.subsample_sizes:
                values = mses[(mode, spec.kind, size)]
                if not values:
                    continue
                mean, std = aggregate(values)
                rows.append(ReportRow(
                    dataset_tag=config.dataset_tag,
                    mode=mode,
                    model_kind=spec.kind,
                    subsample_size=size,
                    n_subsamples=len(values),
                    mse_mean=mean,
                    mse_std=std,
                    per_subsample=values,
                ))
    report = EvaluationReport(rows=rows)
    report.to_csv(out / "report.csv")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    timings["total"] = time.time() - t_start
    # wall times live in a sidecar so the report itself is run-to-run identical
    (out / "timings.json").write_text(json.dumps(timings, indent=1), encoding="utf-8")
    return report


def run_table1_task(config: ExperimentConfig) -> Table1Report:
    """Median-cut classification on 2D projections, per mode and size.

    For each subsample and each of the classical and two-body QRC modes:
    project to 2D, binarize the activity at its median, train an SVM on the
    training rows, score the four metrics on the test rows, and aggregate
    mean/std across subsamples.
    """
    out = config.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config)
    try:
        std_full, _ = standardize(dataset)
    except Exception as exc:
        raise PipelineError("standardize", str(exc)) from exc

    # Table 1 uses the features as configured; selection is the pipeline's job.
    reduced = std_full
    res_config = _reservoir_for(config, reduced.n_features)
    try:
        _cm, assignments = subsample.kmeans(
            reduced.features, min(config.n_clusters, reduced.n_records),
            seed=derive_seed(config.seed, "kmeans"),
        )
    except Exception as exc:
        raise PipelineError("subsample", str(exc)) from exc

    modes = [CLASSICAL_RAW, QRC_TWO_BODY]
    metric_names = ("accuracy", "precision", "recall", "f1")
    collected: dict[tuple[str, str, int], list[float]] = {
        (mode, metric, size): []
        for mode in modes for metric in metric_names for size in config.subsample_sizes
    }
    try:
        for size in config.subsample_sizes:
            with warnings.catch_warnings():
                if config.allow_shortfall:
                    warnings.simplefilter("ignore")
                plan = subsample.make_subsamples(
                    assignments, config.n_subsamples, size,
                    seed=derive_seed(config.seed, f"plan_size{size}"),
                    allow_shortfall=config.allow_shortfall,
                )
            plan.subsamples = [s for s in plan.subsamples if len(s) >= 8]
            for s_idx, indices in enumerate(plan.subsamples):
                split_seed = derive_seed(config.seed, f"split_size{size}_s{s_idx}")
                train_abs, test_abs = subsample.stratified_split(
                    indices, assignments, config.test_fraction, seed=split_seed
                )
                pos = {idx: p for p, idx in enumerate(indices)}
                train_rel = np.array([pos[i] for i in train_abs], dtype=int)
                test_rel = np.array([pos[i] for i in test_abs], dtype=int)
                sub_features = reduced.features[indices]
                sub_ids = [reduced.record_ids[i] for i in indices]
                labels = analysis.median_binarize(reduced.target[indices])
                for mode in modes:
                    if mode == CLASSICAL_RAW:
                        matrix = sub_features
                    else:
                        tr, te, _sc, _emb = _mode_matrices(
                            QRC_TWO_BODY, sub_features, train_rel, test_rel,
                            res_config, sub_ids, config.workers,
                        )
                        matrix = np.empty((len(indices), tr.shape[1]))
                        matrix[train_rel] = tr
                        matrix[test_rel] = te
                    proj = analysis.pca_project(matrix, dims=2)
                    coords = proj.coordinates
                    if labels.labels[train_rel].min() == labels.labels[train_rel].max():
                        continue  # single-class training split; skip this subsample
                    svm = analysis.svm_train(
                        coords[train_rel], labels.labels[train_rel],
                        kernel=config.svm_kernel, C=config.svm_C,
                        seed=derive_seed(config.seed, f"svm_size{size}_s{s_idx}_{mode}"),
                    )
                    metrics = analysis.classification_metrics(
                        svm.predict(coords[test_rel]), labels.labels[test_rel]
                    )
                    for name, value in metrics.as_dict().items():
                        collected[(mode, name, size)].append(value)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError("table1", str(exc)) from exc

    rows = []
    for mode in modes:
        for metric in metric_names:
            for size in config.subsample_sizes:
                values = collected[(mode, metric, size)]
                if not values:
                    continue
                mean, std = aggregate(values)
                rows.append(Table1Row(mode=mode, metric=metric, subsample_size=size,
                                      mean=mean, std=std))
    report = Table1Report(rows=rows)
    report.to_csv(out / "table1.csv")
    (out / "table1.json").write_text(report.to_json(), encoding="utf-8")
    return report


def _write_tournament_csv(path, table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "mse", "position"])
        for row in table:
            writer.writerow([row["kind"], repr(row["mse"]), row["position"]])

import json

import numpy as np
import pytest

from qrcmol.cli import main
from qrcmol.dataset import generate_synthetic, load_csv
from qrcmol.pipeline import (
    CLASSICAL_RAW,
    QRC_ONE_BODY,
    QRC_TWO_BODY,
    ExperimentConfig,
    PipelineError,
    _mode_matrices,
    aggregate,
    derive_seed,
    run_candidate_tournament,
    run_pipeline,
    run_table1_task,
)
from qrcmol.regressors import RegressorSpec
from qrcmol.reservoir import ReservoirConfig


def small_config(tmp_path, **overrides) -> ExperimentConfig:
    base = dict(
        seed=7,
        dataset_tag="synthetic-small",
        synthetic={"n_records": 60, "n_features": 4, "relation": "nonlinear", "noise_sd": 0.1},
        reservoir={"total_time": 0.8, "snapshot_step": 0.4},
        modes=(CLASSICAL_RAW, QRC_ONE_BODY, QRC_TWO_BODY),
        models=[RegressorSpec("linear"), RegressorSpec("knn", {"k": 3})],
        top_k=3,
        subsample_sizes=(20,),
        n_subsamples=2,
        n_clusters=3,
        output_dir=str(tmp_path / "runs"),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestAggregate:
    def test_identical_values(self):
        assert aggregate([1.0, 1.0, 1.0]) == (1.0, 0.0)

    def test_population_std(self):
        assert aggregate([0.0, 2.0]) == (1.0, 1.0)

    def test_singleton(self):
        assert aggregate([4.2]) == (4.2, 0.0)

    def test_empty_raises(self):
        with pytest.raises(PipelineError, match="aggregate"):
            aggregate([])


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(1, "a") == derive_seed(1, "a")

    def test_label_sensitivity(self):
        assert derive_seed(1, "a") != derive_seed(1, "b")

    def test_master_sensitivity(self):
        assert derive_seed(1, "a") != derive_seed(2, "a")


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = small_config(tmp_path)
        restored = ExperimentConfig.from_dict(cfg.to_dict())
        assert restored.to_dict() == cfg.to_dict()
        assert restored.config_hash() == cfg.config_hash()

    def test_hash_changes_with_seed(self, tmp_path):
        a = small_config(tmp_path, seed=1)
        b = small_config(tmp_path, seed=2)
        assert a.config_hash() != b.config_hash()

    def test_needs_a_data_source(self):
        with pytest.raises(PipelineError, match="config"):
            ExperimentConfig(synthetic=None, csv_path=None)

    def test_unknown_mode_rejected(self):
        with pytest.raises(PipelineError, match="mode"):
            ExperimentConfig(synthetic={"n_records": 10, "n_features": 2,
                                        "relation": "linear", "noise_sd": 0.0},
                             modes=("classical_raw", "bogus"))


class TestTournament:
    def test_linear_data_linear_wins(self):
        ds = generate_synthetic(200, 4, "linear", 0.0, seed=1)
        specs = [RegressorSpec(k) for k in ("linear", "knn", "cart")]
        winner, table = run_candidate_tournament(ds, specs, 0.25, seed=1)
        assert winner.kind == "linear"
        assert len(table) == 3

    def test_nonlinear_data_rejects_linear(self):
        ds = generate_synthetic(500, 6, "nonlinear", 0.0, seed=2)
        specs = [RegressorSpec(k) for k in ("linear", "random_forest")]
        winner, _ = run_candidate_tournament(ds, specs, 0.25, seed=2)
        assert winner.kind == "random_forest"

    def test_single_candidate_degenerate(self):
        ds = generate_synthetic(40, 3, "linear", 0.1, seed=3)
        winner, table = run_candidate_tournament(ds, [RegressorSpec("knn")], 0.25, seed=3)
        assert winner.kind == "knn"
        assert len(table) == 1

    def test_no_candidates(self):
        ds = generate_synthetic(40, 3, "linear", 0.1, seed=3)
        with pytest.raises(PipelineError, match="tournament"):
            run_candidate_tournament(ds, [], 0.25, seed=3)


class TestLeakageGuard:
    def test_scaler_fit_on_train_rows_only(self, rng):
        # the global maximum sits in a test row; the scaler must not see it
        features = rng.uniform(size=(10, 3))
        features[9] = 100.0
        train_rel = np.arange(8)
        test_rel = np.array([8, 9])
        res = ReservoirConfig(n_atoms=3, total_time=0.8, snapshot_step=0.4)
        ids = [f"r{i}" for i in range(10)]
        _tr, _te, scaler, _emb = _mode_matrices(
            QRC_TWO_BODY, features, train_rel, test_rel, res, ids, workers=1
        )
        assert np.max(scaler.maxs) < 100.0
        assert scaler.maxs == pytest.approx(features[:8].max(axis=0))
        assert scaler.mins == pytest.approx(features[:8].min(axis=0))


class TestRunPipeline:
    def test_report_shape_and_artifacts(self, tmp_path):
        cfg = small_config(tmp_path)
        report = run_pipeline(cfg)
        # one row per (mode, model, size) combination
        assert len(report.rows) == 3 * 2 * 1
        for row in report.rows:
            assert row.n_subsamples == 2
            assert len(row.per_subsample) == 2
            assert row.mse_mean == pytest.approx(np.mean(row.per_subsample))
        out = cfg.run_dir()
        for name in ("config.json", "standardization.json", "tournament.csv",
                     "shap_ranking.csv", "selected_features.json", "report.csv",
                     "report.json", "timings.json"):
            assert (out / name).exists(), name
        assert (out / "plans" / "size20.json").exists()
        assert (out / "subsamples" / "size20_s0" / "embedding_two_body.csv").exists()

    def test_rerun_byte_identical(self, tmp_path):
        cfg = small_config(tmp_path)
        run_pipeline(cfg)
        out = cfg.run_dir()
        first_csv = (out / "report.csv").read_bytes()
        first_json = (out / "report.json").read_bytes()
        run_pipeline(cfg)
        assert (out / "report.csv").read_bytes() == first_csv
        assert (out / "report.json").read_bytes() == first_json

    def test_selected_feature_count_matches_top_k(self, tmp_path):
        cfg = small_config(tmp_path)
        run_pipeline(cfg)
        doc = json.loads((cfg.run_dir() / "selected_features.json").read_text())
        assert len(doc["indices"]) == 3
        assert doc["indices"] == sorted(doc["indices"])

    def test_reservoir_params_leave_plans_unchanged(self, tmp_path):
        # seed hygiene: physics settings must not perturb the sampling draws
        a = small_config(tmp_path, reservoir={"total_time": 0.8, "snapshot_step": 0.4})
        b = small_config(tmp_path, reservoir={"total_time": 1.2, "snapshot_step": 0.4})
        run_pipeline(a)
        run_pipeline(b)
        assert a.run_dir() != b.run_dir()
        plan_a = (a.run_dir() / "plans" / "size20.json").read_text()
        plan_b = (b.run_dir() / "plans" / "size20.json").read_text()
        assert plan_a == plan_b

    def test_infeasible_subsamples_raise_stage_tag(self, tmp_path):
        cfg = small_config(tmp_path, subsample_sizes=(50,), n_subsamples=3)
        with pytest.raises(PipelineError, match="subsample"):
            run_pipeline(cfg)

    def test_shortfall_keeps_going(self, tmp_path):
        cfg = small_config(tmp_path, subsample_sizes=(50,), n_subsamples=3,
                           allow_shortfall=True)
        report = run_pipeline(cfg)
        # third subsample is empty and gets dropped, leaving 50 + 10
        for row in report.rows:
            assert row.subsample_size == 50
            assert row.n_subsamples == 2


class TestTable1:
    def test_layout_and_ranges(self, tmp_path):
        cfg = small_config(tmp_path, modes=(CLASSICAL_RAW, QRC_TWO_BODY))
        report = run_table1_task(cfg)
        keys = {(r.mode, r.metric, r.subsample_size) for r in report.rows}
        assert len(keys) == len(report.rows)
        modes = {r.mode for r in report.rows}
        metrics = {r.metric for r in report.rows}
        assert modes == {CLASSICAL_RAW, QRC_TWO_BODY}
        assert metrics == {"accuracy", "precision", "recall", "f1"}
        for r in report.rows:
            assert 0.0 <= r.mean <= 1.0
            assert r.std >= 0.0
        assert (cfg.run_dir() / "table1.csv").exists()
        assert (cfg.run_dir() / "table1.json").exists()


class TestCli:
    def test_synth_round_trip(self, tmp_path):
        out = tmp_path / "synth.csv"
        code = main(["synth", "--n-records", "12", "--n-features", "3",
                     "--relation", "linear", "--seed", "4", "--out", str(out)])
        assert code == 0
        ds = load_csv(out)
        assert ds.n_records == 12 and ds.n_features == 3

    def test_ingest_and_summarize(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        raw.write_text("MOLECULE,Act,D_1,D_2\nm1,1.0,2,\nm2,2.0,4,5\nm3,,6,7\n")
        cleaned = tmp_path / "clean.csv"
        assert main(["ingest", "--csv", str(raw), "--out", str(cleaned)]) == 0
        ds = load_csv(cleaned)
        assert ds.n_records == 2  # missing-target row dropped
        assert np.isfinite(ds.features).all()
        assert main(["summarize", "--csv", str(cleaned)]) == 0
        out = capsys.readouterr().out
        doc = json.loads(out[out.index("{"):])
        assert doc["n_records"] == 2

    def test_missing_csv_exits_nonzero(self, tmp_path):
        code = main(["ingest", "--csv", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "out.csv")])
        assert code == 1

    def test_evaluate_and_report(self, tmp_path):
        cfg = small_config(tmp_path, models=[RegressorSpec("linear")],
                           modes=(CLASSICAL_RAW, QRC_TWO_BODY))
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        assert main(["evaluate", "--config", str(cfg_path)]) == 0
        run_dir = cfg.run_dir()
        assert (run_dir / "report.csv").exists()
        assert main(["report", "--run-dir", str(run_dir)]) == 0
        assert (run_dir / "figures" / "mse_vs_size.png").exists()

    def test_pipeline_failure_exit_code_2(self, tmp_path):
        cfg = small_config(tmp_path, subsample_sizes=(50,), n_subsamples=3)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        assert main(["evaluate", "--config", str(cfg_path)]) == 2

    def test_subsample_subcommand(self, tmp_path):
        cfg = small_config(tmp_path)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        assert main(["subsample", "--config", str(cfg_path)]) == 0
        assert (cfg.run_dir() / "plans" / "size20.json").exists()

    def test_workers_env_override(self, tmp_path, monkeypatch):
        from qrcmol.cli import _load_config

        cfg = small_config(tmp_path)
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        monkeypatch.setenv("QRCMOL_WORKERS", "6")
        assert _load_config(cfg_path).workers == 6
        assert _load_config(cfg_path, workers_override=2).workers == 2

    def test_report_on_empty_dir_fails(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--run-dir", str(empty)]) == 1

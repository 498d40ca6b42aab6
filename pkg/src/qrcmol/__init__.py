"""Quantum-reservoir embeddings and a classical modeling pipeline for
molecular activity prediction."""

from .dataset import (
    CsvSchema,
    DataSummary,
    MolecularDataset,
    StandardizationParams,
    apply_standardization,
    generate_synthetic,
    load_csv,
    standardize,
    summarize,
    train_test_split,
)
from .embedding import EmbeddingMatrix, FeatureScaler, embed_dataset, embed_record, encode, fit_scaler
from .pipeline import ExperimentConfig, EvaluationReport, run_pipeline, run_table1_task
from .regressors import RegressorSpec, TrainedModel, mse, predict, train
from .reservoir import (
    DetuningPattern,
    HamiltonianRep,
    ObservableTrace,
    QuantumState,
    ReservoirConfig,
    build_hamiltonian,
    evolve,
    expect_z,
    expect_zz,
    snapshot_observables,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""Feature-to-detuning encoding and observable-trace embedding matrices.

Each molecular descriptor drives one atom: features are min-max scaled to
[-1, 1] on the training rows (test values clamped) and used as the local
detuning pattern. The flattened observable trace is the embedding.

Column order is fixed: for one-body mode, all snapshots of atom 0, then
atom 1, ...; two-body mode appends all snapshots of each (i, j) pair in
lexicographic order. One-body columns are therefore a prefix of the
two-body layout.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import MolecularDataset
from .reservoir import DetuningPattern, ReservoirConfig, snapshot_observables

ONE_BODY = "one_body"
TWO_BODY = "two_body"
MODES = (ONE_BODY, TWO_BODY)


class EmbeddingError(ValueError):
    """Raised for arity mismatches or invalid embedding requests."""


@dataclass
class FeatureScaler:
    """Per-feature min/max learned on training rows."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=float)
        self.maxs = np.asarray(self.maxs, dtype=float)
        if np.any(self.maxs < self.mins):
            raise EmbeddingError("max must be >= min for every feature")

    @property
    def degenerate_mask(self) -> np.ndarray:
        return self.maxs == self.mins

    @property
    def arity(self) -> int:
        return len(self.mins)

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureScaler":
        return cls(mins=np.asarray(doc["mins"]), maxs=np.asarray(doc["maxs"]))


@dataclass
class ColumnLabel:
    kind: str          # "Z" or "ZZ"
    i: int
    j: int | None      # None for one-body columns
    time_us: float

    def as_str(self) -> str:
        if self.kind == "Z":
            return f"Z_{self.i}@t{self.time_us:g}"
        return f"ZZ_{self.i}_{self.j}@t{self.time_us:g}"


@dataclass
class EmbeddingMatrix:
    values: np.ndarray                 # (n_records, D)
    column_labels: list[ColumnLabel]
    mode: str
    record_ids: list[str]

    def __post_init__(self):
        if self.values.shape[1] != len(self.column_labels):
            raise EmbeddingError("column label count must match matrix width")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["record_id"] + [c.as_str() for c in self.column_labels])
            for rid, row in zip(self.record_ids, self.values):
                writer.writerow([rid] + [repr(float(v)) for v in row])

    def write_sidecar(self, path, config: ReservoirConfig, scaler: FeatureScaler) -> None:
        """Reproducibility sidecar: reservoir config + scaler + mode."""
        doc = {
            "mode": self.mode,
            "reservoir": config.to_dict(),
            "scaler": scaler.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)


def fit_scaler(train_features: np.ndarray) -> FeatureScaler:
    """Column-wise min/max of the training rows."""
    X = np.asarray(train_features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise EmbeddingError("need at least one training row")
    return FeatureScaler(mins=X.min(axis=0), maxs=X.max(axis=0))


def encode(scaler: FeatureScaler, record: np.ndarray) -> DetuningPattern:
    """Min-max map of one record to [-1, 1], clamped; degenerate features -> 0."""
    x = np.asarray(record, dtype=float)
    if x.shape != (scaler.arity,):
        raise EmbeddingError(f"record arity {x.shape} does not match scaler arity {scaler.arity}")
    span = np.where(scaler.degenerate_mask, 1.0, scaler.maxs - scaler.mins)
    f = 2.0 * (x - scaler.mins) / span - 1.0
    f[scaler.degenerate_mask] = 0.0
    return DetuningPattern(np.clip(f, -1.0, 1.0))


def column_labels(config: ReservoirConfig, mode: str) -> list[ColumnLabel]:
    """Fixed column layout for an embedding at the given reservoir config."""
    if mode not in MODES:
        raise EmbeddingError(f"unknown mode {mode!r}")
    times = config.snapshot_times
    labels = [
        ColumnLabel("Z", i, None, float(t))
        for i in range(config.n_atoms)
        for t in times
    ]
    if mode == TWO_BODY:
        labels += [
            ColumnLabel("ZZ", i, j, float(t))
            for (i, j) in config.pair_list()
            for t in times
        ]
    return labels


def embedding_width(config: ReservoirConfig, mode: str) -> int:
    n, t = config.n_atoms, len(config.snapshot_times)
    width = n * t
    if mode == TWO_BODY:
        width += (n * (n - 1) // 2) * t
    return width


def embed_record(config: ReservoirConfig, pattern: DetuningPattern, mode: str) -> np.ndarray:
    """Flatten one record's observable trace into an embedding vector."""
    if mode not in MODES:
        raise EmbeddingError(f"unknown mode {mode!r}")
    trace = snapshot_observables(config, pattern)
    parts = [trace.one_body.T.ravel()]          # atom-major, snapshots contiguous
    if mode == TWO_BODY:
        parts.append(trace.two_body.T.ravel())  # pair-major, snapshots contiguous
    return np.concatenate(parts)


def embed_dataset(
    config: ReservoirConfig,
    scaler: FeatureScaler,
    dataset: MolecularDataset,
    mode: str,
    workers: int = 1,
) -> EmbeddingMatrix:
    """Embed every record; the result is independent of the worker count."""
    if dataset.n_features != config.n_atoms:
        raise EmbeddingError(
            f"dataset has {dataset.n_features} features but the reservoir has "
            f"{config.n_atoms} atoms"
        )
    patterns = [encode(scaler, row) for row in dataset.features]

    def one(pattern):
        return embed_record(config, pattern, mode)

    if workers <= 1:
        rows = [one(p) for p in patterns]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, patterns))
    return EmbeddingMatrix(
        values=np.vstack(rows) if rows else np.zeros((0, embedding_width(config, mode))),
        column_labels=column_labels(config, mode),
        mode=mode,
        record_ids=list(dataset.record_ids),
    )

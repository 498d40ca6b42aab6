"""Loading, cleaning, standardizing and splitting molecular descriptor tables.

The CSV layout follows the molecular-activity challenge convention: one id
column, one real-valued activity target column, and an arbitrary number of
numeric descriptor columns. Cleaning drops unnamed columns and rows without
a target, and mean-imputes missing descriptor values.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed input tables or invalid dataset operations."""


@dataclass
class CsvSchema:
    """Column roles for a descriptor CSV.

    If ``feature_prefix`` is set, only columns whose name starts with it are
    treated as descriptors; otherwise every named column that is not the id
    or the target is a descriptor.
    """

    id_column: str = "MOLECULE"
    target_column: str = "Act"
    feature_prefix: str | None = None


@dataclass
class MolecularDataset:
    record_ids: list[str]
    features: np.ndarray          # (n_records, n_features)
    feature_names: list[str]
    target: np.ndarray            # (n_records,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2D matrix")
        n = self.features.shape[0]
        if len(self.target) != n or len(self.record_ids) != n:
            raise DatasetError("record_ids, features and target lengths disagree")
        if len(self.feature_names) != self.features.shape[1]:
            raise DatasetError("feature_names length must match feature columns")

    @property
    def n_records(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "MolecularDataset":
        """New dataset restricted to ``indices`` (order preserved)."""
        idx = np.asarray(indices, dtype=int)
        return MolecularDataset(
            record_ids=[self.record_ids[i] for i in idx],
            features=self.features[idx].copy(),
            feature_names=list(self.feature_names),
            target=self.target[idx].copy(),
        )

    def select_features(self, columns) -> "MolecularDataset":
        """New dataset keeping only the given feature column indices."""
        cols = list(columns)
        return MolecularDataset(
            record_ids=list(self.record_ids),
            features=self.features[:, cols].copy(),
            feature_names=[self.feature_names[c] for c in cols],
            target=self.target.copy(),
        )


@dataclass
class StandardizationParams:
    """Per-column location/scale fitted on a training table.

    Scale uses the population convention (divide by n). Columns with zero
    variance are flagged in ``constant_mask`` and map to 0 on application.
    """

    means: np.ndarray
    stddevs: np.ndarray
    constant_mask: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "means": self.means.tolist(),
                "stddevs": self.stddevs.tolist(),
                "constant_mask": self.constant_mask.astype(bool).tolist(),
                "feature_names": list(self.feature_names),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "StandardizationParams":
        doc = json.loads(text)
        return cls(
            means=np.asarray(doc["means"], dtype=float),
            stddevs=np.asarray(doc["stddevs"], dtype=float),
            constant_mask=np.asarray(doc["constant_mask"], dtype=bool),
            feature_names=list(doc.get("feature_names", [])),
        )


@dataclass
class DataSummary:
    n_records: int
    n_features: int
    missing_count: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    skew: np.ndarray
    kurtosis: np.ndarray           # excess kurtosis; NaN where undefined
    constant_mask: np.ndarray


def load_csv(path, schema: CsvSchema | None = None) -> MolecularDataset:
    """Read a descriptor CSV, clean it, and return a complete dataset.

    Cleaning rules: columns with an empty header are dropped; rows whose
    target is missing or unparseable are dropped; missing descriptor values
    are imputed with the column mean of the observed values. Lines starting
    with ``#`` are skipped.
    """
    schema = schema or CsvSchema()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DatasetError(f"file not found: {path}") from None

    with fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"empty file: {path}") from None
        rows = list(reader)

    named = [(i, name) for i, name in enumerate(header) if name.strip() != ""]
    names = [name for _, name in named]
    if schema.target_column not in names:
        raise DatasetError(f"target column {schema.target_column!r} not in header")
    feature_cols = []
    for i, name in named:
        if name in (schema.id_column, schema.target_column):
            continue
        if schema.feature_prefix is not None and not name.startswith(schema.feature_prefix):
            continue
        feature_cols.append((i, name))
    if not feature_cols:
        raise DatasetError("no feature columns after applying the schema")

    id_col = header.index(schema.id_column) if schema.id_column in header else None
    target_col = header.index(schema.target_column)

    record_ids: list[str] = []
    targets: list[float] = []
    feat_rows: list[list[float]] = []
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetError(f"malformed row {r + 2}: expected {len(header)} fields, got {len(row)}")
        raw_t = row[target_col].strip()
        try:
            t = float(raw_t)
        except ValueError:
            t = math.nan
        if not math.isfinite(t):
            continue  # row without a usable target is dropped
        targets.append(t)
        record_ids.append(row[id_col].strip() if id_col is not None else str(r))
        vals = []
        for c, _name in feature_cols:
            raw = row[c].strip()
            if raw == "":
                vals.append(math.nan)
            else:
                try:
                    vals.append(float(raw))
                except ValueError:
                    raise DatasetError(f"malformed row {r + 2}: non-numeric value {raw!r}") from None
        feat_rows.append(vals)

    if not feat_rows:
        raise DatasetError("no rows with a valid target")
    features = np.asarray(feat_rows, dtype=float)

    # Mean imputation from observed values, column by column.
    for j in range(features.shape[1]):
        col = features[:, j]
        missing = ~np.isfinite(col)
        if missing.any():
            observed = col[~missing]
            if observed.size == 0:
                raise DatasetError(f"feature {feature_cols[j][1]!r} has no observed values")
            col[missing] = observed.mean()

    return MolecularDataset(
        record_ids=record_ids,
        features=features,
        feature_names=[name for _, name in feature_cols],
        target=np.asarray(targets, dtype=float),
    )


def _moments(col: np.ndarray) -> tuple[float, float]:
    """Sample skewness and excess kurtosis from central moments."""
    m = col.mean()
    d = col - m
    m2 = np.mean(d**2)
    if m2 <= 0:
        return 0.0, math.nan
    m3 = np.mean(d**3)
    m4 = np.mean(d**4)
    return float(m3 / m2**1.5), float(m4 / m2**2 - 3.0)


def summarize(dataset: MolecularDataset) -> DataSummary:
    """Per-feature univariate statistics (min/max, skew, excess kurtosis)."""
    if dataset.n_records == 0:
        raise DatasetError("cannot summarize an empty dataset")
    X = dataset.features
    d = dataset.n_features
    missing = (~np.isfinite(X)).sum(axis=0)
    skew = np.zeros(d)
    kurt = np.full(d, math.nan)
    const = np.zeros(d, dtype=bool)
    for j in range(d):
        col = X[np.isfinite(X[:, j]), j]
        if col.size == 0 or np.ptp(col) == 0:
            const[j] = True
            continue
        skew[j], kurt[j] = _moments(col)
    return DataSummary(
        n_records=dataset.n_records,
        n_features=d,
        missing_count=missing,
        minimum=np.nanmin(X, axis=0),
        maximum=np.nanmax(X, axis=0),
        skew=skew,
        kurtosis=kurt,
        constant_mask=const,
    )


def standardize(dataset: MolecularDataset) -> tuple[MolecularDataset, StandardizationParams]:
    """Zero-mean unit-variance features (population std); target untouched."""
    if dataset.n_records < 2:
        raise DatasetError("standardize needs at least 2 records")
    X = dataset.features
    means = X.mean(axis=0)
    sds = X.std(axis=0)  # population convention
    const = sds == 0
    params = StandardizationParams(
        means=means,
        stddevs=np.where(const, 1.0, sds),
        constant_mask=const,
        feature_names=list(dataset.feature_names),
    )
    return apply_standardization(params, dataset), params


def apply_standardization(params: StandardizationParams, dataset: MolecularDataset) -> MolecularDataset:
    """Apply fitted location/scale column-wise; constant columns map to 0."""
    if params.feature_names and params.feature_names != dataset.feature_names:
        raise DatasetError("feature names do not match the fitted standardization params")
    Z = (dataset.features - params.means) / params.stddevs
    Z[:, params.constant_mask] = 0.0
    return MolecularDataset(
        record_ids=list(dataset.record_ids),
        features=Z,
        feature_names=list(dataset.feature_names),
        target=dataset.target.copy(),
    )


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights``.

    Floors the quotas and hands remaining units to the largest fractional
    remainders, ties broken by lower index.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        raise ValueError("weights must have a positive sum")
    quotas = total * weights / weights.sum()
    alloc = np.floor(quotas).astype(int)
    remainder = quotas - alloc
    short = total - alloc.sum()
    # stable sort keeps the lower index first among ties
    order = np.argsort(-remainder, kind="stable")
    for i in order[:short]:
        alloc[i] += 1
    return alloc


def split_indices(
    n_records: int,
    test_fraction: float,
    strata=None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive (train, test) index partition.

    Test size is round(test_fraction * n); with strata, test counts are
    allocated per stratum by largest remainder. Strata too small to
    stratify trigger a global-pool fallback (reported via a warning).
    """
    if n_records < 2:
        raise DatasetError("need at least 2 records to split")
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0x5B17]))
    n_test = int(round(test_fraction * n_records))
    n_test = min(max(n_test, 1), n_records - 1)

    if strata is None:
        perm = rng.permutation(n_records)
        test = np.sort(perm[:n_test])
        train = np.sort(perm[n_test:])
        return train, test

    strata = np.asarray(strata)
    if len(strata) != n_records:
        raise DatasetError("strata length must equal n_records")
    labels, counts = np.unique(strata, return_counts=True)
    if (counts < 2).any():
        warnings.warn("stratum with fewer than 2 records; falling back to a global split")
        return split_indices(n_records, test_fraction, strata=None, seed=seed)
    alloc = _largest_remainder(n_test, counts)
    test_parts = []
    for lab, take in zip(labels, alloc):
        members = np.flatnonzero(strata == lab)
        perm = rng.permutation(len(members))
        test_parts.append(members[perm[:take]])
    test = np.sort(np.concatenate(test_parts)) if test_parts else np.array([], dtype=int)
    mask = np.ones(n_records, dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask), test


def train_test_split(
    dataset: MolecularDataset,
    test_fraction: float,
    strata=None,
    seed: int = 0,
) -> tuple[MolecularDataset, MolecularDataset]:
    """Split a dataset into disjoint train/test parts (see ``split_indices``)."""
    train_idx, test_idx = split_indices(dataset.n_records, test_fraction, strata, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def generate_synthetic(
    n_records: int,
    n_features: int,
    relation: str = "linear",
    noise_sd: float = 0.0,
    seed: int = 0,
) -> MolecularDataset:
    """Synthetic descriptor table for tests and demo runs.

    Features are i.i.d. Uniform(0, 1). ``linear`` targets are X @ w + noise
    with weights w drawn once from Uniform(-3, 3); ``nonlinear`` targets use
    a Friedman-style surface 10*sin(pi*a*b) + 20*(c-0.5)^2 + 10*d + 5*e over
    feature columns (0, 1, 2, 3, 4) modulo n_features, plus noise.
    """
    if n_records < 4 or n_features < 1:
        raise DatasetError("need n_records >= 4 and n_features >= 1")
    if relation not in ("linear", "nonlinear"):
        raise DatasetError(f"unknown relation {relation!r}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0xDA7A]))
    X = rng.uniform(0.0, 1.0, size=(n_records, n_features))
    if relation == "linear":
        w = rng.uniform(-3.0, 3.0, size=n_features)
        y = X @ w
    else:
        a, b, c, d, e = (X[:, k % n_features] for k in range(5))
        y = 10.0 * np.sin(np.pi * a * b) + 20.0 * (c - 0.5) ** 2 + 10.0 * d + 5.0 * e
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=n_records)
    return MolecularDataset(
        record_ids=[f"SYN_{i}" for i in range(n_records)],
        features=X,
        feature_names=[f"D_{j + 1}" for j in range(n_features)],
        target=y,
    )

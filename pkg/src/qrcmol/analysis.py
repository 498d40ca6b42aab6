"""2D projection, median-cut binary labels, SVM classification, and metrics.

The built-in 2D projector is PCA. For external nonlinear projection tools
the exporter writes a plain CSV whose header comment records the projection
parameters used in our reference runs (neighbors 200, min_dist 0.9,
Minkowski metric).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class AnalysisError(ValueError):
    """Raised for degenerate projection or classification inputs."""


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

@dataclass
class Projection2D:
    coordinates: np.ndarray        # (n_records, dims)
    method: str
    explained_variance: np.ndarray  # ratio per axis, nonincreasing


def pca_project(X: np.ndarray, dims: int = 2) -> Projection2D:
    """Mean-centered principal axes by descending eigenvalue.

    Sign convention: the largest-magnitude loading of each axis is positive,
    so projections are reproducible across platforms.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise AnalysisError("PCA needs at least 2 rows")
    centered = X - X.mean(axis=0)
    total_var = np.sum(centered**2)
    if total_var <= 0:
        raise AnalysisError("PCA input has rank 0")
    dims = min(dims, *X.shape)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:dims]
    for a in range(dims):
        pivot = int(np.argmax(np.abs(axes[a])))
        if axes[a, pivot] < 0:
            axes[a] = -axes[a]
    coords = centered @ axes.T
    explained = (svals[:dims] ** 2) / total_var
    return Projection2D(coordinates=coords, method="pca", explained_variance=explained)


EXPORT_PROJECTION_PARAMS = "n_neighbors=200, min_dist=0.9, metric=minkowski"


def export_for_projection(X: np.ndarray, ids, path, target=None) -> None:
    """Write a byte-stable CSV of features (plus optional target) for
    external 2D-projection tooling; the suggested projection parameters are
    recorded in a leading ``#`` comment."""
    X = np.asarray(X, dtype=float)
    if len(ids) != X.shape[0]:
        raise AnalysisError("ids length must match the row count")
    if target is not None and len(target) != X.shape[0]:
        raise AnalysisError("target length must match the row count")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# projection params: {EXPORT_PROJECTION_PARAMS}\n")
        writer = csv.writer(fh)
        header = ["MOLECULE"] + [f"F_{j}" for j in range(X.shape[1])]
        if target is not None:
            header.insert(1, "Act")
        writer.writerow(header)
        for r, rid in enumerate(ids):
            row = [rid] + [repr(float(v)) for v in X[r]]
            if target is not None:
                row.insert(1, repr(float(target[r])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Median-cut labels
# ---------------------------------------------------------------------------

@dataclass
class BinaryLabels:
    labels: np.ndarray         # {0, 1}
    threshold: float           # the sample median
    degenerate: bool = False   # every record landed in one class


def median_binarize(target: np.ndarray) -> BinaryLabels:
    """High/low split at the sample median; ties at the median go low."""
    target = np.asarray(target, dtype=float)
    if target.size < 2:
        raise AnalysisError("need at least 2 targets to binarize")
    threshold = float(np.median(target))
    labels = (target > threshold).astype(int)
    return BinaryLabels(
        labels=labels,
        threshold=threshold,
        degenerate=bool(labels.min() == labels.max()),
    )


# ---------------------------------------------------------------------------
# SVM (sequential minimal optimization)
# ---------------------------------------------------------------------------

@dataclass
class SvmModel:
    kernel: str                 # "linear" or "rbf"
    gamma: float | None
    C: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray       # alpha_i * y_i on the support set
    bias: float

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        K = _svm_kernel(np.asarray(X, dtype=float), self.support_vectors, self.kernel, self.gamma)
        return K @ self.dual_coef + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)


def _svm_kernel(A, B, kernel, gamma):
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (
            np.sum(A**2, axis=1)[:, None]
            + np.sum(B**2, axis=1)[None, :]
            - 2.0 * A @ B.T
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-gamma * sq)
    raise AnalysisError(f"unknown kernel {kernel!r}")


def median_heuristic_gamma(X: np.ndarray) -> float:
    """gamma = 1 / (2 * median pairwise squared distance)."""
    X = np.asarray(X, dtype=float)
    sq = (
        np.sum(X**2, axis=1)[:, None]
        + np.sum(X**2, axis=1)[None, :]
        - 2.0 * X @ X.T
    )
    vals = sq[np.triu_indices(len(X), k=1)]
    med = float(np.median(vals[vals > 0])) if np.any(vals > 0) else 1.0
    return 1.0 / (2.0 * med)


def svm_train(
    X: np.ndarray,
    labels: BinaryLabels | np.ndarray,
    kernel: str = "rbf",
    C: float = 1.0,
    gamma: float | None = None,
    seed: int = 0,
    tol: float = 1e-3,
    max_passes: int = 20,
) -> SvmModel:
    """Soft-margin SVM trained with sequential minimal optimization."""
    X = np.asarray(X, dtype=float)
    raw = labels.labels if isinstance(labels, BinaryLabels) else np.asarray(labels)
    if len(raw) != len(X) or len(X) < 2:
        raise AnalysisError("labels must match rows, with at least 2 rows")
    classes = np.unique(raw)
    if len(classes) < 2:
        raise AnalysisError("SVM training needs both classes present")
    y = np.where(raw == classes.max(), 1.0, -1.0)

    if kernel == "rbf" and gamma is None:
        gamma = median_heuristic_gamma(X)
    K = _svm_kernel(X, X, kernel, gamma)
    n = len(X)
    alpha = np.zeros(n)
    b = 0.0
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0x5FF]))

    def f(i):
        return float((alpha * y) @ K[:, i] + b)

    passes = 0
    while passes < max_passes:
        changed = 0
        for i in range(n):
            E_i = f(i) - y[i]
            if (y[i] * E_i < -tol and alpha[i] < C) or (y[i] * E_i > tol and alpha[i] > 0):
                j = int(rng.integers(n - 1))
                if j >= i:
                    j += 1
                E_j = f(j) - y[j]
                a_i_old, a_j_old = alpha[i], alpha[j]
                if y[i] != y[j]:
                    low = max(0.0, a_j_old - a_i_old)
                    high = min(C, C + a_j_old - a_i_old)
                else:
                    low = max(0.0, a_i_old + a_j_old - C)
                    high = min(C, a_i_old + a_j_old)
                if low >= high:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0:
                    continue
                a_j = a_j_old - y[j] * (E_i - E_j) / eta
                a_j = min(max(a_j, low), high)
                if abs(a_j - a_j_old) < 1e-7 * (a_j + a_j_old + 1e-7):
                    continue
                a_i = a_i_old + y[i] * y[j] * (a_j_old - a_j)
                alpha[i], alpha[j] = a_i, a_j
                b1 = b - E_i - y[i] * (a_i - a_i_old) * K[i, i] - y[j] * (a_j - a_j_old) * K[i, j]
                b2 = b - E_j - y[i] * (a_i - a_i_old) * K[i, j] - y[j] * (a_j - a_j_old) * K[j, j]
                if 0 < a_i < C:
                    b = b1
                elif 0 < a_j < C:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                changed += 1
        passes = passes + 1 if changed == 0 else 0

    support = alpha > 1e-12
    return SvmModel(
        kernel=kernel,
        gamma=gamma,
        C=C,
        support_vectors=X[support],
        dual_coef=alpha[support] * y[support],
        bias=b,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def classification_metrics(predicted: np.ndarray, actual: np.ndarray) -> ClassificationMetrics:
    """Standard binary metrics with positive class 1; undefined ratios
    report 0 with the corresponding flag cleared."""
    predicted = np.asarray(predicted).astype(int)
    actual = np.asarray(actual).astype(int)
    if predicted.shape != actual.shape:
        raise AnalysisError("predicted and actual label lengths differ")
    tp = int(np.sum((predicted == 1) & (actual == 1)))
    fp = int(np.sum((predicted == 1) & (actual == 0)))
    fn = int(np.sum((predicted == 0) & (actual == 1)))
    tn = int(np.sum((predicted == 0) & (actual == 0)))
    accuracy = (tp + tn) / len(actual)
    precision_defined = (tp + fp) > 0
    recall_defined = (tp + fn) > 0
    precision = tp / (tp + fp) if precision_defined else 0.0
    recall = tp / (tp + fn) if recall_defined else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return ClassificationMetrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        precision_defined=precision_defined,
        recall_defined=recall_defined,
    )

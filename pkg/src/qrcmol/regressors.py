"""Readout regression models: linear, k-nearest-neighbors, CART, random
forest, and Gaussian-process regression with an RBF kernel.

All models are fit through ``train`` and evaluated through ``predict``; the
test metric is ``mse``. Forest randomness is counter-based: tree t draws
from a generator seeded with (seed, t), so results do not depend on fitting
order or scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

KINDS = ("linear", "knn", "cart", "random_forest", "gp_rbf")

MODEL_FORMAT_TAG = "qrcmol-model-v1"

DEFAULT_HYPERPARAMS: dict[str, dict] = {
    "linear": {"ridge": 1e-8},
    "knn": {"k": 5},
    "cart": {"max_depth": None, "min_leaf": 2},
    "random_forest": {
        "n_trees": 100,
        "max_features": "sqrt",   # "sqrt", "all", or an integer
        "min_leaf": 2,
        "max_depth": None,
        "bootstrap": True,
    },
    "gp_rbf": {"length_scale": 1.0, "signal_variance": 1.0, "noise_variance": 1e-2},
}


class RegressorError(ValueError):
    """Raised for invalid specs, degenerate inputs, or arity mismatches."""


@dataclass
class RegressorSpec:
    kind: str
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RegressorError(f"unknown regressor kind {self.kind!r}")
        unknown = set(self.hyperparams) - set(DEFAULT_HYPERPARAMS[self.kind])
        if unknown:
            raise RegressorError(f"unknown hyperparameters for {self.kind}: {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**DEFAULT_HYPERPARAMS[self.kind], **self.hyperparams}


@dataclass
class TrainedModel:
    kind: str
    hyperparams: dict
    params: dict                  # kind-specific fitted parameters
    n_train: int
    n_features: int
    seed: int

    def to_json(self) -> str:
        def default(o):
            if isinstance(o, np.ndarray):
                return o.tolist()
            if isinstance(o, (np.integer,)):
                return int(o)
            if isinstance(o, (np.floating,)):
                return float(o)
            raise TypeError(f"not serializable: {type(o)}")

        doc = {
            "format": MODEL_FORMAT_TAG,
            "kind": self.kind,
            "hyperparams": self.hyperparams,
            "params": self.params,
            "n_train": self.n_train,
            "n_features": self.n_features,
            "seed": self.seed,
        }
        return json.dumps(doc, default=default, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT_TAG:
            raise RegressorError(f"unsupported model format {doc.get('format')!r}")
        params = _arrays_from_lists(doc["kind"], doc["params"])
        return cls(
            kind=doc["kind"],
            hyperparams=doc["hyperparams"],
            params=params,
            n_train=doc["n_train"],
            n_features=doc["n_features"],
            seed=doc["seed"],
        )


def _arrays_from_lists(kind: str, params: dict) -> dict:
    out = dict(params)
    array_keys = {
        "linear": ["weights"],
        "knn": ["X", "y"],
        "cart": ["feature", "threshold", "left", "right", "value"],
        "gp_rbf": ["X", "alpha"],
    }
    for key in array_keys.get(kind, []):
        out[key] = np.asarray(out[key])
    if kind == "random_forest":
        out["trees"] = [_arrays_from_lists("cart", t) for t in out["trees"]]
    return out


# ---------------------------------------------------------------------------
# CART internals (shared by the random forest)
# ---------------------------------------------------------------------------

def _best_split(X, y, feature_ids, min_leaf):
    """Greedy variance-reduction split; returns (sse, feature, threshold) or None.

    Ties go to the earliest candidate position of the earliest feature in
    ``feature_ids`` order.
    """
    n = len(y)
    best = None
    for f in feature_ids:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        if xs[0] == xs[-1]:
            continue
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        left_n = np.arange(min_leaf, n - min_leaf + 1)
        if left_n.size == 0:
            continue
        boundary_ok = xs[left_n - 1] < xs[left_n]
        if not boundary_ok.any():
            continue
        left_sum = csum[left_n - 1]
        left_sq = csq[left_n - 1]
        right_n = n - left_n
        sse = (
            left_sq - left_sum**2 / left_n
            + (csq[-1] - left_sq) - (csum[-1] - left_sum) ** 2 / right_n
        )
        sse = np.where(boundary_ok, sse, np.inf)
        pos = int(np.argmin(sse))
        if math.isinf(sse[pos]):
            continue
        if best is None or sse[pos] < best[0] - 1e-12:
            cut = left_n[pos]
            threshold = 0.5 * (xs[cut - 1] + xs[cut])
            best = (float(sse[pos]), int(f), float(threshold))
    return best


def _fit_tree(X, y, min_leaf, max_depth, rng=None, max_features=None):
    """Array-encoded regression tree; leaves have feature == -1.

    When ``rng`` is given, each split considers a fresh random subset of
    ``max_features`` columns (the forest's per-split feature subsampling).
    """
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    d = X.shape[1]

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(rows, depth):
        node = add_node()
        ys = y[rows]
        value[node] = float(ys.mean())
        if len(rows) < 2 * min_leaf or np.ptp(ys) == 0.0:
            return node
        if max_depth is not None and depth >= max_depth:
            return node
        if rng is not None and max_features is not None and max_features < d:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        else:
            feats = np.arange(d)
        split = _best_split(X[rows], ys, feats, min_leaf)
        if split is None:
            return node
        _, f, thr = split
        mask = X[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(rows[mask], depth + 1)
        right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(len(y)), 0)
    return {
        "feature": np.asarray(feature, dtype=np.int64),
        "threshold": np.asarray(threshold, dtype=float),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "value": np.asarray(value, dtype=float),
    }


def _tree_predict(tree, X):
    node = np.zeros(len(X), dtype=np.int64)
    feature = tree["feature"]
    active = feature[node] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        cur = node[rows]
        go_left = X[rows, feature[cur]] <= tree["threshold"][cur]
        node[rows] = np.where(go_left, tree["left"][cur], tree["right"][cur])
        active = feature[node] >= 0
    return tree["value"][node]


def _forest_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Counter-based per-tree stream: independent of fitting order."""
    return np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), int(tree_index), 0xF0BE57]))


def _resolve_max_features(spec_value, d: int) -> int | None:
    if spec_value in (None, "all"):
        return None
    if spec_value == "sqrt":
        return int(math.ceil(math.sqrt(d)))
    mf = int(spec_value)
    if not 1 <= mf <= d:
        raise RegressorError(f"max_features {mf} out of range for {d} features")
    return mf


# ---------------------------------------------------------------------------
# Public surface
# ---------------------------------------------------------------------------

def train(spec: RegressorSpec, X: np.ndarray, y: np.ndarray, seed: int = 0) -> TrainedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise RegressorError("X must be 2D with one row per target entry")
    if len(y) < 2:
        raise RegressorError("need at least 2 training rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise RegressorError("training data contains non-finite values")
    hp = spec.resolved()
    n, d = X.shape

    if spec.kind == "linear":
        A = np.hstack([X, np.ones((n, 1))])
        gram = A.T @ A + hp["ridge"] * np.eye(d + 1)
        weights = np.linalg.solve(gram, A.T @ y)
        params = {"weights": weights}
    elif spec.kind == "knn":
        if hp["k"] > n:
            raise RegressorError(f"knn k={hp['k']} exceeds training size {n}")
        params = {"X": X.copy(), "y": y.copy()}
    elif spec.kind == "cart":
        params = _fit_tree(X, y, min_leaf=hp["min_leaf"], max_depth=hp["max_depth"])
    elif spec.kind == "random_forest":
        mf = _resolve_max_features(hp["max_features"], d)
        trees = []
        for t in range(hp["n_trees"]):
            rng = _forest_rng(seed, t)
            if hp["bootstrap"]:
                rows = rng.integers(0, n, size=n)
            else:
                rows = np.arange(n)
            trees.append(
                _fit_tree(
                    X[rows], y[rows],
                    min_leaf=hp["min_leaf"], max_depth=hp["max_depth"],
                    rng=rng, max_features=mf,
                )
            )
        params = {"trees": trees}
    elif spec.kind == "gp_rbf":
        y_mean = float(y.mean())
        K = _rbf_kernel(X, X, hp["length_scale"], hp["signal_variance"])
        K[np.diag_indices_from(K)] += hp["noise_variance"]
        jitter = 0.0
        while True:
            try:
                factor = cho_factor(K + jitter * np.eye(n), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-12)
                if jitter > 1e-3:
                    raise RegressorError("GP kernel matrix is not positive definite")
        alpha = cho_solve(factor, y - y_mean)
        params = {"X": X.copy(), "alpha": alpha, "y_mean": y_mean}
    else:  # pragma: no cover - guarded by RegressorSpec
        raise RegressorError(spec.kind)

    return TrainedModel(
        kind=spec.kind,
        hyperparams=hp,
        params=params,
        n_train=n,
        n_features=d,
        seed=int(seed),
    )


def _rbf_kernel(A, B, length_scale, signal_variance):
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    return signal_variance * np.exp(-sq / (2.0 * length_scale**2))


def predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise RegressorError(
            f"prediction arity {X.shape} does not match the {model.n_features} training features"
        )
    hp = model.hyperparams
    if model.kind == "linear":
        A = np.hstack([X, np.ones((len(X), 1))])
        return A @ model.params["weights"]
    if model.kind == "knn":
        Xt, yt = model.params["X"], model.params["y"]
        out = np.empty(len(X))
        for r, x in enumerate(X):
            dist = np.linalg.norm(Xt - x, axis=1)
            nearest = np.argsort(dist, kind="stable")[: hp["k"]]
            out[r] = yt[nearest].mean()
        return out
    if model.kind == "cart":
        return _tree_predict(model.params, X)
    if model.kind == "random_forest":
        acc = np.zeros(len(X))
        for tree in model.params["trees"]:
            acc += _tree_predict(tree, X)
        return acc / len(model.params["trees"])
    if model.kind == "gp_rbf":
        K_star = _rbf_kernel(X, model.params["X"], hp["length_scale"], hp["signal_variance"])
        return model.params["y_mean"] + K_star @ model.params["alpha"]
    raise RegressorError(model.kind)  # pragma: no cover


def mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise RegressorError("predictions and targets must have the same nonzero length")
    return float(np.mean((predictions - targets) ** 2))

"""Kernel SHAP attributions and mean-|value| feature ranking.

Shapley values are estimated by the kernel method: coalitions of present
features are scored by imputing absent features from background rows, and a
weighted linear model is fit with the efficiency constraint built in, so
base value plus attributions always reproduces the model output on the
explained record. With a budget covering all 2^d - 2 proper coalitions the
estimate is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .regressors import TrainedModel, predict


class ShapError(ValueError):
    """Raised for infeasible budgets or inconsistent arities."""


@dataclass
class ShapConfig:
    background: np.ndarray        # (n_background, d) reference records
    n_coalitions: int = 2048
    regularization: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        self.background = np.atleast_2d(np.asarray(self.background, dtype=float))
        if self.background.shape[0] < 1:
            raise ShapError("background must contain at least one row")
        d = self.background.shape[1]
        if self.n_coalitions < 2 * d + 2:
            raise ShapError(f"n_coalitions must be >= {2 * d + 2} for {d} features")


@dataclass
class Attribution:
    base_value: float
    phi: np.ndarray

    @property
    def total(self) -> float:
        return self.base_value + float(self.phi.sum())


@dataclass
class FeatureRanking:
    indices: np.ndarray          # feature indices, descending score
    scores: np.ndarray           # mean absolute attributions, aligned with indices

    def to_csv(self, path, feature_names=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature_name", "score", "rank"])
            for rank, (idx, score) in enumerate(zip(self.indices, self.scores), start=1):
                name = feature_names[idx] if feature_names else f"feature_{idx}"
                writer.writerow([name, repr(float(score)), rank])


def _kernel_weight(d: int, size: int) -> float:
    from math import comb

    return (d - 1) / (comb(d, size) * size * (d - size))


def _all_coalitions(d: int) -> np.ndarray:
    rows = []
    for size in range(1, d):
        for combo in combinations(range(d), size):
            z = np.zeros(d, dtype=bool)
            z[list(combo)] = True
            rows.append(z)
    return np.asarray(rows)


def _sampled_coalitions(d: int, budget: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded coalition sample with complement pairing; returns (Z, counts)."""
    sizes = np.arange(1, d)
    size_w = np.array([_kernel_weight(d, s) * _comb(d, s) for s in sizes])
    size_p = size_w / size_w.sum()
    seen: dict[bytes, int] = {}
    order: list[np.ndarray] = []
    for _ in range(budget // 2):
        s = rng.choice(sizes, p=size_p)
        members = rng.choice(d, size=s, replace=False)
        z = np.zeros(d, dtype=bool)
        z[members] = True
        for cand in (z, ~z):
            key = cand.tobytes()
            if key in seen:
                seen[key] += 1
            else:
                seen[key] = 1
                order.append(cand.copy())
    counts = np.array([seen[z.tobytes()] for z in order], dtype=float)
    return np.asarray(order), counts


def _comb(n, k):
    from math import comb

    return comb(n, k)


def kernel_shap(model: TrainedModel, record: np.ndarray, config: ShapConfig) -> Attribution:
    """Shapley attributions for one record via the kernel method."""
    x = np.asarray(record, dtype=float)
    d = x.shape[0]
    if config.background.shape[1] != d or model.n_features != d:
        raise ShapError("record, background, and model arities disagree")

    f_x = float(predict(model, x[None, :])[0])
    f_0 = float(predict(model, config.background).mean())

    if 2**d - 2 <= config.n_coalitions:
        Z = _all_coalitions(d)
        weights = np.array([_kernel_weight(d, int(z.sum())) for z in Z])
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(config.seed), 0x5A7]))
        Z, weights = _sampled_coalitions(d, config.n_coalitions, rng)

    # Score every coalition against the background in one batched prediction.
    n_bg = config.background.shape[0]
    stacked = np.where(
        np.repeat(Z, n_bg, axis=0),
        x[None, :],
        np.tile(config.background, (len(Z), 1)),
    )
    v = predict(model, stacked).reshape(len(Z), n_bg).mean(axis=1)

    # Efficiency constraint: substitute phi_{d-1} = (f_x - f_0) - sum(others).
    z_last = Z[:, d - 1].astype(float)
    A = Z[:, : d - 1].astype(float) - z_last[:, None]
    b = v - f_0 - z_last * (f_x - f_0)
    W = weights
    gram = (A * W[:, None]).T @ A + config.regularization * np.eye(d - 1)
    rhs = (A * W[:, None]).T @ b
    try:
        head = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        head = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    phi = np.empty(d)
    phi[: d - 1] = head
    phi[d - 1] = (f_x - f_0) - head.sum()
    return Attribution(base_value=f_0, phi=phi)


def rank_features(attributions: list[Attribution]) -> FeatureRanking:
    """Mean absolute attribution per feature, descending; ties by lower index."""
    if not attributions:
        raise ShapError("need at least one attribution")
    width = len(attributions[0].phi)
    if any(len(a.phi) != width for a in attributions):
        raise ShapError("attributions have inconsistent arity")
    mat = np.vstack([a.phi for a in attributions])
    scores = np.abs(mat).mean(axis=0)
    order = np.argsort(-scores, kind="stable")
    return FeatureRanking(indices=order, scores=scores[order])


def select_top_k(ranking: FeatureRanking, k: int) -> list[int]:
    """Top-k ranked feature indices, returned ascending for dataset slicing."""
    n = len(ranking.indices)
    if not 1 <= k <= n:
        raise ShapError(f"k={k} out of range for {n} features")
    return sorted(int(i) for i in ranking.indices[:k])

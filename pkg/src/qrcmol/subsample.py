"""K-means clustering and cluster-proportional disjoint subsampling.

Subsamples are drawn without replacement from a single global pool, so no
record ever appears in two subsamples of the same plan. Per-subsample
cluster allocations are proportional to the population cluster frequencies
with largest-remainder rounding.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import _largest_remainder, split_indices


class SubsampleError(ValueError):
    """Raised for infeasible clusterings or subsample plans."""


@dataclass
class ClusterModel:
    centroids: np.ndarray        # (k, d)
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centroids)

    def assign(self, X: np.ndarray) -> np.ndarray:
        return _nearest(np.asarray(X, dtype=float), self.centroids)


@dataclass
class SubsamplePlan:
    subsamples: list[np.ndarray]     # index sets, pairwise disjoint
    subsample_size: int
    n_subsamples: int

    def to_json(self, record_ids=None) -> str:
        if record_ids is not None:
            payload = [[record_ids[i] for i in s] for s in self.subsamples]
        else:
            payload = [s.tolist() for s in self.subsamples]
        return json.dumps(
            {
                "subsample_size": self.subsample_size,
                "n_subsamples": self.n_subsamples,
                "subsamples": payload,
            },
            sort_keys=True,
        )


def _nearest(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[c:] = X[rng.integers(n, size=k - c)]
            break
        probs = d2 / total
        centroids[c] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((X - centroids[c]) ** 2, axis=1))
    return centroids


def kmeans(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300) -> tuple[ClusterModel, np.ndarray]:
    """Lloyd iterations from a seeded k-means++ start until a fixpoint.

    Empty clusters are reseeded from the point farthest from its assigned
    centroid.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise SubsampleError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0xC1D5]))
    centroids = _kmeanspp_init(X, k, rng)
    assignments = _nearest(X, centroids)
    for _ in range(max_iter):
        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
            else:
                dist = np.sum((X - centroids[assignments]) ** 2, axis=1)
                farthest = int(np.argmax(dist))
                centroids[c] = X[farthest]
                assignments[farthest] = c
        new_assignments = _nearest(X, centroids)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
    inertia = float(np.sum((X - centroids[assignments]) ** 2))
    return ClusterModel(centroids=centroids, inertia=inertia), assignments


def cluster_allocation(assignments: np.ndarray, subsample_size: int) -> np.ndarray:
    """Largest-remainder allocation of one subsample across clusters."""
    _, counts = np.unique(np.asarray(assignments), return_counts=True)
    return _largest_remainder(subsample_size, counts)


def make_subsamples(
    assignments: np.ndarray,
    n_subsamples: int,
    subsample_size: int,
    seed: int = 0,
    allow_shortfall: bool = False,
) -> SubsamplePlan:
    """Pairwise-disjoint, cluster-proportional subsamples.

    With ``allow_shortfall`` the plan keeps going once the pool runs dry and
    later subsamples come up short (a warning reports the shortfall);
    otherwise an infeasible request raises.
    """
    assignments = np.asarray(assignments)
    n = len(assignments)
    if n_subsamples < 1 or subsample_size < 1:
        raise SubsampleError("n_subsamples and subsample_size must be positive")
    if n_subsamples * subsample_size > n and not allow_shortfall:
        raise SubsampleError(
            f"{n_subsamples} x {subsample_size} records requested from a pool of {n}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0x5AB5]))
    labels = np.unique(assignments)
    alloc = cluster_allocation(assignments, subsample_size)

    # One seeded shuffle per cluster; draws consume the pools front to back.
    pools = {}
    for lab in labels:
        members = np.flatnonzero(assignments == lab)
        pools[lab] = list(members[rng.permutation(len(members))])
    leftover_order = list(rng.permutation(n))

    taken = np.zeros(n, dtype=bool)
    subsamples = []
    for _s in range(n_subsamples):
        chosen: list[int] = []
        for lab, want in zip(labels, alloc):
            pool = pools[lab]
            while want > 0 and pool:
                idx = pool.pop(0)
                if not taken[idx]:
                    taken[idx] = True
                    chosen.append(idx)
                    want -= 1
        if len(chosen) < subsample_size:
            # cluster pools exhausted; fall back to the global pool
            for idx in leftover_order:
                if len(chosen) == subsample_size:
                    break
                if not taken[idx]:
                    taken[idx] = True
                    chosen.append(idx)
        if len(chosen) < subsample_size:
            warnings.warn(
                f"subsample {_s} short by {subsample_size - len(chosen)} records: pool exhausted"
            )
        subsamples.append(np.sort(np.asarray(chosen, dtype=int)))
    return SubsamplePlan(
        subsamples=subsamples,
        subsample_size=subsample_size,
        n_subsamples=n_subsamples,
    )


def stratified_split(
    indices: np.ndarray,
    assignments: np.ndarray,
    test_fraction: float,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster-stratified train/test partition of one subsample's indices."""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        raise SubsampleError("cannot split an empty index set")
    strata = np.asarray(assignments)[indices]
    train_rel, test_rel = split_indices(len(indices), test_fraction, strata=strata, seed=seed)
    return indices[train_rel], indices[test_rel]

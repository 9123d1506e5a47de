"""Lloyd's k-means with k-means++ seeding on standardized numeric features.

Constant features are dropped at fit time when anything non-constant
remains; a fully constant dataset is only clusterable with k=1 (every
standardized vector is the zero vector).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from ..domain import MissingFeatureError, TaxpayerCase

MAX_ITERATIONS = 100
AUTO_K_RANGE = range(2, 9)
_SILHOUETTE_CAP = 2500  # pairwise-distance memory bound for auto-k


@dataclass
class ClusterModel:
    k: int
    feature_list: tuple[str, ...]
    centroids: np.ndarray  # (k, d) in standardized space
    means: np.ndarray  # (d,) raw-space means
    stds: np.ndarray  # (d,) raw-space stddevs, > 0
    wcss_history: list[float] = field(default_factory=list)

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.means) / self.stds


def case_vector(case: TaxpayerCase, feature_list: tuple[str, ...]) -> np.ndarray | None:
    """Raw numeric vector, or None when any feature is missing."""
    out = np.empty(len(feature_list))
    for i, name in enumerate(feature_list):
        value = case.features.get(name)
        if not isinstance(value, Decimal) or isinstance(value, bool):
            return None
        out[i] = float(value)
    return out


def complete_matrix(
    cases: list[TaxpayerCase], feature_list: tuple[str, ...]
) -> tuple[np.ndarray, list[TaxpayerCase]]:
    rows = []
    kept = []
    for case in cases:
        vec = case_vector(case, feature_list)
        if vec is not None:
            rows.append(vec)
            kept.append(case)
    if not rows:
        return np.empty((0, len(feature_list))), []
    return np.vstack(rows), kept


def fit_clusters(
    training: list[TaxpayerCase],
    feature_list: tuple[str, ...],
    k: int | str = "auto",
    seed: int = 0,
) -> ClusterModel:
    """Fit k-means; k="auto" picks k in 2..8 by mean silhouette."""
    matrix, kept = complete_matrix(training, feature_list)
    n = matrix.shape[0]
    if n == 0:
        raise ValueError("no training cases with complete numeric features")

    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)
    varying = stds > 0
    if not varying.any():
        if k == "auto" or (isinstance(k, int) and k > 1):
            raise ValueError("all features are constant; only k=1 is meaningful")
        # keep the features; every standardized vector is exactly zero
        stds = np.ones_like(stds)
        used = feature_list
    else:
        used = tuple(f for f, keep in zip(feature_list, varying) if keep)
        matrix = matrix[:, varying]
        means = means[varying]
        stds = stds[varying]

    std_matrix = (matrix - means) / stds

    if k == "auto":
        k_value = _select_k(std_matrix, seed)
    else:
        k_value = int(k)
    if k_value < 1:
        raise ValueError("k must be >= 1")
    if n < k_value:
        raise ValueError(f"need at least k={k_value} complete cases, got {n}")

    centroids, wcss_history = _lloyd(std_matrix, k_value, seed)
    return ClusterModel(
        k=k_value,
        feature_list=used,
        centroids=centroids,
        means=means,
        stds=stds,
        wcss_history=wcss_history,
    )


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.RandomState) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = rng.randint(n)
    centroids[0] = points[first]
    closest_sq = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0:
            idx = rng.randint(n)
        else:
            idx = rng.choice(n, p=closest_sq / total)
        centroids[j] = points[idx]
        dist_sq = ((points - centroids[j]) ** 2).sum(axis=1)
        closest_sq = np.minimum(closest_sq, dist_sq)
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # argmin returns the lowest index on ties, which is the tie rule
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d.argmin(axis=1)
    return labels, d[np.arange(len(points)), labels]


def _lloyd(points: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, list[float]]:
    rng = np.random.RandomState(seed)
    centroids = _kmeanspp_init(points, k, rng)
    prev_labels: np.ndarray | None = None
    wcss_history: list[float] = []
    for _ in range(MAX_ITERATIONS):
        labels, dist_sq = _assign(points, centroids)
        wcss_history.append(float(dist_sq.sum()))
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # empty cluster: reseed at the point farthest from its centroid
                centroids[j] = points[dist_sq.argmax()]
    return centroids, wcss_history


def assign_cluster(model: ClusterModel, case: TaxpayerCase) -> int:
    """Index of the nearest centroid; ties resolve to the lowest id."""
    raw = np.empty(len(model.feature_list))
    for i, name in enumerate(model.feature_list):
        value = case.features.get(name)
        if not isinstance(value, Decimal) or isinstance(value, bool):
            raise MissingFeatureError(name)
        raw[i] = float(value)
    std = model.standardize(raw)
    d = ((model.centroids - std) ** 2).sum(axis=1)
    return int(d.argmin())


def within_cluster_ss(model: ClusterModel, cases: list[TaxpayerCase]) -> float:
    matrix, _ = complete_matrix(cases, model.feature_list)
    std = (matrix - model.means) / model.stds
    _, dist_sq = _assign(std, model.centroids)
    return float(dist_sq.sum())


def mean_silhouette(points: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Mean silhouette coefficient; singleton-cluster points score 0."""
    n = len(points)
    if n <= 1 or k <= 1:
        return 0.0
    sq = (points**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    d = np.sqrt(np.maximum(d2, 0.0))
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    sums = d @ onehot  # (n, k): total distance from i to each cluster
    counts = onehot.sum(axis=0)
    scores = np.zeros(n)
    for i in range(n):
        own = labels[i]
        if counts[own] <= 1:
            continue
        a = sums[i, own] / (counts[own] - 1)
        b = np.inf
        for j in range(k):
            if j != own and counts[j] > 0:
                b = min(b, sums[i, j] / counts[j])
        if not np.isfinite(b):
            continue
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def _select_k(points: np.ndarray, seed: int) -> int:
    if len(points) > _SILHOUETTE_CAP:
        rng = np.random.RandomState(seed)
        sample_idx = rng.choice(len(points), _SILHOUETTE_CAP, replace=False)
    else:
        sample_idx = None
    best_k, best_score = 2, -np.inf
    for k in AUTO_K_RANGE:
        if len(points) < k:
            break
        centroids, _ = _lloyd(points, k, seed)
        eval_points = points if sample_idx is None else points[sample_idx]
        labels, _ = _assign(eval_points, centroids)
        score = mean_silhouette(eval_points, labels, k)
        if score > best_score:
            best_k, best_score = k, score
    return best_k

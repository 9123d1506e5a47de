"""Binary CART classifiers (Gini impurity) trained per cluster.

Trees stay shallow (default depth 4) so their decision paths remain
readable; a leaf stores the fraud probability of its training slice.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from ..domain import MissingFeatureError, TaxpayerCase
from .kmeans import ClusterModel, assign_cluster, case_vector

DEFAULT_MAX_DEPTH = 4
DEFAULT_MIN_LEAF = 5


@dataclass
class TreeNode:
    feature: str | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    probability: float | None = None  # set iff leaf

    @property
    def is_leaf(self) -> bool:
        return self.probability is not None


@dataclass
class ClusterClassifier:
    cluster_id: int
    tree: TreeNode
    max_depth: int


def _gini(labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    p = labels.mean()
    return float(2.0 * p * (1.0 - p))


def _best_split(
    matrix: np.ndarray, labels: np.ndarray, min_leaf: int
) -> tuple[int, float] | None:
    """Best (feature index, threshold) by Gini decrease; None when no split
    leaves min_leaf samples on both sides. First feature wins ties."""
    n = len(labels)
    parent = _gini(labels)
    best: tuple[int, float] | None = None
    best_gain = 1e-12
    for j in range(matrix.shape[1]):
        order = matrix[:, j].argsort(kind="stable")
        values = matrix[order, j]
        sorted_labels = labels[order]
        positives = np.cumsum(sorted_labels)
        total_pos = positives[-1]
        for cut in range(min_leaf, n - min_leaf + 1):
            if values[cut - 1] == values[cut]:
                continue  # not a boundary between distinct values
            left_n = cut
            right_n = n - cut
            lp = positives[cut - 1] / left_n
            rp = (total_pos - positives[cut - 1]) / right_n
            weighted = (left_n * 2 * lp * (1 - lp) + right_n * 2 * rp * (1 - rp)) / n
            gain = parent - weighted
            if gain > best_gain:
                best_gain = gain
                best = (j, float((values[cut - 1] + values[cut]) / 2.0))
    return best


def _grow(
    matrix: np.ndarray,
    labels: np.ndarray,
    feature_list: tuple[str, ...],
    depth: int,
    max_depth: int,
    min_leaf: int,
) -> TreeNode:
    n = len(labels)
    if depth >= max_depth or n < 2 * min_leaf or labels.min() == labels.max():
        return TreeNode(probability=float(labels.mean()))
    split = _best_split(matrix, labels, min_leaf)
    if split is None:
        return TreeNode(probability=float(labels.mean()))
    j, threshold = split
    mask = matrix[:, j] <= threshold
    return TreeNode(
        feature=feature_list[j],
        threshold=threshold,
        left=_grow(matrix[mask], labels[mask], feature_list, depth + 1, max_depth, min_leaf),
        right=_grow(matrix[~mask], labels[~mask], feature_list, depth + 1, max_depth, min_leaf),
    )


def fit_cluster_classifiers(
    model: ClusterModel,
    training: list[TaxpayerCase],
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_leaf: int = DEFAULT_MIN_LEAF,
) -> dict[int, ClusterClassifier]:
    """One tree per populated cluster, trained on raw feature values of
    audited cases; clusters without training cases get no classifier."""
    buckets: dict[int, tuple[list[np.ndarray], list[bool]]] = {}
    for case in training:
        if case.outcome is None or not case.outcome.audited:
            raise ValueError(f"training case {case.case_id} has no audit outcome")
        vec = case_vector(case, model.feature_list)
        if vec is None:
            continue
        rows, ys = buckets.setdefault(assign_cluster(model, case), ([], []))
        rows.append(vec)
        ys.append(case.outcome.fraud_found)
    out: dict[int, ClusterClassifier] = {}
    for cluster_id, (rows, ys) in sorted(buckets.items()):
        matrix = np.vstack(rows)
        labels = np.array(ys, dtype=float)
        tree = _grow(matrix, labels, model.feature_list, 0, max_depth, min_leaf)
        out[cluster_id] = ClusterClassifier(cluster_id=cluster_id, tree=tree, max_depth=max_depth)
    return out


def predict_tree(node: TreeNode, case: TaxpayerCase) -> float:
    while not node.is_leaf:
        value = case.features.get(node.feature)
        if not isinstance(value, Decimal) or isinstance(value, bool):
            raise MissingFeatureError(node.feature)
        node = node.left if float(value) <= node.threshold else node.right
    return node.probability


def tree_to_obj(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"probability": node.probability}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": tree_to_obj(node.left),
        "right": tree_to_obj(node.right),
    }


def tree_from_obj(obj: dict) -> TreeNode:
    if "probability" in obj:
        return TreeNode(probability=float(obj["probability"]))
    return TreeNode(
        feature=obj["feature"],
        threshold=float(obj["threshold"]),
        left=tree_from_obj(obj["left"]),
        right=tree_from_obj(obj["right"]),
    )

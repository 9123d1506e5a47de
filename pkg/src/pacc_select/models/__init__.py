"""Embedded predictive models: clustering, per-cluster classifiers, the
logistic effectiveness model and robust peer statistics.

Model outputs feed rule conditions through the registered ids
`company_fraud` and `effectiveness`; an unavailable output is returned as
NotApplicable, never coerced to a number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..domain import MissingFeatureError, NotApplicable, TaxpayerCase
from .effectiveness import (
    DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
    EffectivenessModel,
    effectiveness_risk,
    fit_effectiveness,
)
from .kmeans import (
    ClusterModel,
    assign_cluster,
    case_vector,
    fit_clusters,
    mean_silhouette,
    within_cluster_ss,
)
from .peers import PeerStats, PeerCell, fit_peer_stats, peer_ratio, peer_zscore
from .tree import (
    DEFAULT_MAX_DEPTH,
    DEFAULT_MIN_LEAF,
    ClusterClassifier,
    TreeNode,
    fit_cluster_classifiers,
    predict_tree,
    tree_from_obj,
    tree_to_obj,
)

REGISTERED_MODEL_IDS = {"company_fraud", "effectiveness"}

MODELS_FORMAT_VERSION = 1

# Numeric subspace the cluster model and classifiers operate on.
DEFAULT_CLUSTER_FEATURES: tuple[str, ...] = (
    "employee_count",
    "revenue_eur",
    "personnel_cost_eur",
    "profit_eur",
    "input_tax_eur",
    "output_tax_eur",
    "tax_base_eur",
    "total_assets_eur",
)

# Inputs of the missing-trader effectiveness model.
DEFAULT_EFFECTIVENESS_FEATURES: tuple[str, ...] = (
    "employee_count",
    "revenue_eur",
    "input_tax_eur",
    "output_tax_eur",
    "intra_community_acquisitions_eur",
    "vat_refund_claims_eur",
    "bank_accounts_count",
    "vat_periods_filed_last_year",
)


@dataclass
class TrainedModels:
    clusters: ClusterModel | None = None
    classifiers: dict[int, ClusterClassifier] = field(default_factory=dict)
    effectiveness: EffectivenessModel | None = None
    peers: PeerStats | None = None

    def available_model_ids(self) -> set[str]:
        out = set()
        if self.clusters is not None:
            out.add("company_fraud")
        if self.effectiveness is not None:
            out.add("effectiveness")
        return out


def predict_company_fraud(models: TrainedModels, case: TaxpayerCase) -> float | NotApplicable:
    """Cluster assignment followed by that cluster's tree probability."""
    if models.clusters is None:
        return NotApplicable("no cluster model trained")
    try:
        cluster_id = assign_cluster(models.clusters, case)
    except MissingFeatureError as exc:
        return NotApplicable(str(exc))
    classifier = models.classifiers.get(cluster_id)
    if classifier is None:
        return NotApplicable(f"no classifier for cluster {cluster_id}")
    try:
        return predict_tree(classifier.tree, case)
    except MissingFeatureError as exc:
        return NotApplicable(str(exc))


def models_peer_zscore(models: TrainedModels, case: TaxpayerCase, feature: str) -> float | NotApplicable:
    if models.clusters is None or models.peers is None:
        return NotApplicable("no peer statistics trained")
    try:
        cluster_id = assign_cluster(models.clusters, case)
    except MissingFeatureError as exc:
        return NotApplicable(str(exc))
    return peer_zscore(models.peers, cluster_id, case, feature)


def models_peer_ratio(models: TrainedModels, case: TaxpayerCase, feature: str) -> float | NotApplicable:
    if models.clusters is None or models.peers is None:
        return NotApplicable("no peer statistics trained")
    try:
        cluster_id = assign_cluster(models.clusters, case)
    except MissingFeatureError as exc:
        return NotApplicable(str(exc))
    return peer_ratio(models.peers, cluster_id, case, feature)


def train_models(
    corpus_cases: list[TaxpayerCase],
    cluster_features: tuple[str, ...] = DEFAULT_CLUSTER_FEATURES,
    effectiveness_features: tuple[str, ...] = DEFAULT_EFFECTIVENESS_FEATURES,
    peer_features: list[str] | None = None,
    k: int | str = "auto",
    seed: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    qualitative_weight: float = 1.0,
    frequency_weight: float = 1.0,
) -> TrainedModels:
    """Fit every model from the audited training slice of the corpus.

    Clustering and classifiers learn from audited cases of any kind; the
    effectiveness model learns from audited missing-trader cases; peer
    statistics are computed over the whole corpus per assigned cluster.
    """
    training = [c for c in corpus_cases if c.outcome is not None and c.outcome.audited]
    if not training:
        raise ValueError("no audited cases to train on")
    clusters = fit_clusters(training, cluster_features, k=k, seed=seed)
    classifiers = fit_cluster_classifiers(clusters, training, max_depth=max_depth)
    mt_training = [c for c in training if c.kind.value == "missing_trader"]
    effectiveness = None
    if mt_training and any(c.outcome.fraud_found for c in mt_training):
        effectiveness = fit_effectiveness(
            mt_training,
            effectiveness_features,
            qualitative_weight=qualitative_weight,
            frequency_weight=frequency_weight,
        )
    peers = fit_peer_stats(
        clusters,
        corpus_cases,
        peer_features if peer_features is not None else list(cluster_features),
    )
    return TrainedModels(
        clusters=clusters,
        classifiers=classifiers,
        effectiveness=effectiveness,
        peers=peers,
    )


# ---------------------------------------------------------------------------
# Serialization (docs/models.md)

def models_to_obj(models: TrainedModels) -> dict:
    obj: dict = {"format_version": MODELS_FORMAT_VERSION}
    if models.clusters is not None:
        c = models.clusters
        obj["clusters"] = {
            "k": c.k,
            "feature_list": list(c.feature_list),
            "centroids": c.centroids.tolist(),
            "means": c.means.tolist(),
            "stds": c.stds.tolist(),
            "wcss_history": list(c.wcss_history),
        }
    else:
        obj["clusters"] = None
    obj["classifiers"] = [
        {
            "cluster_id": cl.cluster_id,
            "max_depth": cl.max_depth,
            "tree": tree_to_obj(cl.tree),
        }
        for _, cl in sorted(models.classifiers.items())
    ]
    if models.effectiveness is not None:
        e = models.effectiveness
        obj["effectiveness"] = {
            "feature_list": list(e.feature_list),
            "weights": e.weights.tolist(),
            "intercept": e.intercept,
            "means": e.means.tolist(),
            "stds": e.stds.tolist(),
            "qualitative_weight": e.qualitative_weight,
            "frequency_weight": e.frequency_weight,
        }
    else:
        obj["effectiveness"] = None
    if models.peers is not None:
        obj["peers"] = {
            str(cluster_id): {
                name: {"median": cell.median, "mad": cell.mad, "count": cell.count}
                for name, cell in sorted(cells.items())
            }
            for cluster_id, cells in sorted(models.peers.cells.items())
        }
    else:
        obj["peers"] = None
    return obj


def models_from_obj(obj: dict) -> TrainedModels:
    version = obj.get("format_version")
    if version != MODELS_FORMAT_VERSION:
        raise ValueError(f"unsupported models format_version {version!r}")
    models = TrainedModels()
    if obj.get("clusters") is not None:
        c = obj["clusters"]
        models.clusters = ClusterModel(
            k=int(c["k"]),
            feature_list=tuple(c["feature_list"]),
            centroids=np.array(c["centroids"], dtype=float).reshape(int(c["k"]), -1),
            means=np.array(c["means"], dtype=float),
            stds=np.array(c["stds"], dtype=float),
            wcss_history=[float(x) for x in c.get("wcss_history", [])],
        )
    for entry in obj.get("classifiers", []):
        models.classifiers[int(entry["cluster_id"])] = ClusterClassifier(
            cluster_id=int(entry["cluster_id"]),
            tree=tree_from_obj(entry["tree"]),
            max_depth=int(entry["max_depth"]),
        )
    if obj.get("effectiveness") is not None:
        e = obj["effectiveness"]
        models.effectiveness = EffectivenessModel(
            feature_list=tuple(e["feature_list"]),
            weights=np.array(e["weights"], dtype=float),
            intercept=float(e["intercept"]),
            means=np.array(e["means"], dtype=float),
            stds=np.array(e["stds"], dtype=float),
            qualitative_weight=float(e["qualitative_weight"]),
            frequency_weight=float(e["frequency_weight"]),
        )
    if obj.get("peers") is not None:
        stats = PeerStats()
        for cluster_id, cells in obj["peers"].items():
            stats.cells[int(cluster_id)] = {
                name: PeerCell(median=float(v["median"]), mad=float(v["mad"]), count=int(v["count"]))
                for name, v in cells.items()
            }
        models.peers = stats
    return models


def save_models(models: TrainedModels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(models_to_obj(models), fh, indent=1)
        fh.write("\n")


def load_models(path: str | Path) -> TrainedModels:
    with open(path, "r", encoding="utf-8") as fh:
        return models_from_obj(json.load(fh))

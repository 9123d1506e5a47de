"""Robust per-cluster peer statistics (median / MAD) for outlier rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from ..domain import MissingFeatureError, NotApplicable, TaxpayerCase
from .kmeans import ClusterModel, assign_cluster

MAD_SCALE = 1.4826  # makes MAD comparable to a normal stddev


@dataclass(frozen=True)
class PeerCell:
    median: float
    mad: float
    count: int


@dataclass
class PeerStats:
    # cluster id -> feature name -> cell
    cells: dict[int, dict[str, PeerCell]] = field(default_factory=dict)

    def cell(self, cluster_id: int, feature: str) -> PeerCell | None:
        return self.cells.get(cluster_id, {}).get(feature)


def fit_peer_stats(
    model: ClusterModel,
    cases: list[TaxpayerCase],
    features: list[str],
) -> PeerStats:
    """Median and MAD per cluster for every requested numeric feature.
    Cases whose cluster vector is incomplete are left out entirely."""
    values: dict[int, dict[str, list[float]]] = {}
    for case in cases:
        try:
            cluster_id = assign_cluster(model, case)
        except MissingFeatureError:
            continue
        bucket = values.setdefault(cluster_id, {})
        for name in features:
            v = case.features.get(name)
            if isinstance(v, Decimal) and not isinstance(v, bool):
                bucket.setdefault(name, []).append(float(v))
    stats = PeerStats()
    for cluster_id, by_feature in sorted(values.items()):
        cluster_cells: dict[str, PeerCell] = {}
        for name, vals in by_feature.items():
            arr = np.array(vals)
            med = float(np.median(arr))
            mad = float(np.median(np.abs(arr - med)))
            cluster_cells[name] = PeerCell(median=med, mad=mad, count=len(vals))
        stats.cells[cluster_id] = cluster_cells
    return stats


def peer_zscore(
    stats: PeerStats, cluster_id: int, case: TaxpayerCase, feature: str
) -> float | NotApplicable:
    """Robust z of the case's value against its cluster: (v - median) /
    (1.4826 * MAD). Exactly 0 for the median case."""
    value = case.features.get(feature)
    if not isinstance(value, Decimal) or isinstance(value, bool):
        return NotApplicable(f"missing feature {feature}")
    cell = stats.cell(cluster_id, feature)
    if cell is None:
        return NotApplicable(f"no peer statistics for feature {feature} in cluster {cluster_id}")
    if cell.mad == 0:
        return NotApplicable(f"peer MAD is zero for feature {feature} in cluster {cluster_id}")
    v = float(value)
    if v == cell.median:
        return 0.0
    return (v - cell.median) / (MAD_SCALE * cell.mad)


def peer_ratio(
    stats: PeerStats, cluster_id: int, case: TaxpayerCase, feature: str
) -> float | NotApplicable:
    """Case value divided by the cluster median of the feature."""
    value = case.features.get(feature)
    if not isinstance(value, Decimal) or isinstance(value, bool):
        return NotApplicable(f"missing feature {feature}")
    cell = stats.cell(cluster_id, feature)
    if cell is None:
        return NotApplicable(f"no peer statistics for feature {feature} in cluster {cluster_id}")
    if cell.median == 0:
        return NotApplicable(f"peer median is zero for feature {feature} in cluster {cluster_id}")
    return float(value) / cell.median

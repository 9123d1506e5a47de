"""Logistic effectiveness model for missing-trader risk.

risk = sigmoid(q * f * (w . x_std) + intercept), where q and f are the
configurable qualitative and frequency scalings applied to the fitted
logit. Both default to 1; positive values preserve feature monotonicity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..domain import NotApplicable, TaxpayerCase
from .kmeans import case_vector

DEFAULT_LEARNING_RATE = 0.1
DEFAULT_EPOCHS = 500


@dataclass
class EffectivenessModel:
    feature_list: tuple[str, ...]
    weights: np.ndarray  # (d,)
    intercept: float
    means: np.ndarray
    stds: np.ndarray
    qualitative_weight: float = 1.0
    frequency_weight: float = 1.0


def _sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def fit_effectiveness(
    training: list[TaxpayerCase],
    feature_list: tuple[str, ...],
    learning_rate: float = DEFAULT_LEARNING_RATE,
    epochs: int = DEFAULT_EPOCHS,
    qualitative_weight: float = 1.0,
    frequency_weight: float = 1.0,
) -> EffectivenessModel:
    """Full-batch gradient descent on logistic loss; deterministic because
    weights start at zero and the data order is fixed."""
    rows, labels = [], []
    for case in training:
        if case.outcome is None or not case.outcome.audited:
            raise ValueError(f"training case {case.case_id} has no audit outcome")
        vec = case_vector(case, feature_list)
        if vec is None:
            continue
        rows.append(vec)
        labels.append(1.0 if case.outcome.fraud_found else 0.0)
    if not rows:
        raise ValueError("no training cases with complete features")
    matrix = np.vstack(rows)
    y = np.array(labels)
    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)
    stds[stds == 0] = 1.0
    x = (matrix - means) / stds
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        p = _sigmoid(x @ w + b)
        err = p - y
        w -= learning_rate * (x.T @ err) / n
        b -= learning_rate * float(err.mean())
    return EffectivenessModel(
        feature_list=feature_list,
        weights=w,
        intercept=b,
        means=means,
        stds=stds,
        qualitative_weight=qualitative_weight,
        frequency_weight=frequency_weight,
    )


def effectiveness_risk(model: EffectivenessModel, case: TaxpayerCase) -> float | NotApplicable:
    vec = case_vector(case, model.feature_list)
    if vec is None:
        missing = next(
            (n for n in model.feature_list if case_vector(case, (n,)) is None),
            model.feature_list[0],
        )
        return NotApplicable(f"missing feature {missing}")
    x = (vec - model.means) / model.stds
    logit = float(model.weights @ x)
    scaled = model.qualitative_weight * model.frequency_weight * logit + model.intercept
    return float(_sigmoid(scaled))

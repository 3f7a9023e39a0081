"""Evaluation quantities tracked per round."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError
from .nets import ModelBundle


@dataclass
class MetricsRecord:
    round: int
    budget_spent_percent: float
    target_accuracy: float
    pseudo_label_accuracy: float
    high_loss_misprediction_rate: float
    low_loss_misprediction_rate: float
    selected_class_coverage: int
    selected_mean_pairwise_feature_distance: float
    mean_prediction_entropy: float
    losses: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def predict_probs(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    with dc.no_grad():
        return dc.softmax_rows(bundle.C(bundle.F(x))).values


def predict_features(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    with dc.no_grad():
        return bundle.F(x).values


def predicted_losses(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    with dc.no_grad():
        return bundle.P(bundle.F(x)).values.reshape(-1)


def predict_labels(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    return dc.argmax_rows(predict_probs(bundle, x))


def target_accuracy(bundle: ModelBundle, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean(predict_labels(bundle, x) == np.asarray(y)))


def pseudo_label_accuracy(pseudo_labels, true_labels) -> float:
    a, b = np.asarray(pseudo_labels), np.asarray(true_labels)
    if a.shape != b.shape:
        raise ContractError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ContractError("pseudo-label accuracy of an empty pool")
    return float(np.mean(a == b))


def quantile_split(predicted: np.ndarray, ids: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the high and low predicted-loss groups.

    Sorted ascending by (predicted loss, id); the lowest ``floor(q * n)``
    (clamped to ``[1, n-1]``) form the low group.
    """
    n = len(predicted)
    order = np.lexsort((ids, predicted))
    n_low = min(max(int(np.floor(q * n)), 1), n - 1)
    return order[n_low:], order[:n_low]


def misprediction_split(bundle: ModelBundle, x: np.ndarray, y: np.ndarray, ids: np.ndarray | None = None,
                        q: float = 0.5) -> tuple[float, float]:
    """Misclassification rate of the high and low predicted-loss groups."""
    if not 0.0 < q < 1.0:
        raise ContractError(f"quantile must lie in (0, 1), got {q}")
    if len(x) < 2:
        raise ContractError("misprediction split needs at least two samples")
    ids = np.arange(len(x)) if ids is None else np.asarray(ids)
    wrong = predict_labels(bundle, x) != np.asarray(y)
    high, low = quantile_split(predicted_losses(bundle, x), ids, q)
    return float(wrong[high].mean()), float(wrong[low].mean())


def mean_pairwise_distance(points: np.ndarray) -> float:
    n = len(points)
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, k=1)
    diff = points[iu[0]] - points[iu[1]]
    return float(np.sqrt((diff ** 2).sum(axis=1)).mean())


def diversity_proxies(selected_ids, bundle: ModelBundle, pool) -> tuple[int, float]:
    """Distinct true classes among the selection and the mean pairwise
    Euclidean distance of their features."""
    selected_ids = np.asarray(selected_ids, dtype=np.int64)
    if selected_ids.size == 0:
        raise ContractError("diversity of an empty selection")
    pos = {int(i): k for k, i in enumerate(pool.target.ids)}
    try:
        idx = np.array([pos[int(i)] for i in selected_ids])
    except KeyError as exc:
        raise DimensionError(f"selected id {exc.args[0]} is not a target sample") from None
    coverage = len(np.unique(pool.target.y[idx]))
    return coverage, mean_pairwise_distance(predict_features(bundle, pool.target.x[idx]))


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())

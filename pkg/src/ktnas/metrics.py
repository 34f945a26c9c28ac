"""AUC, accuracy and RMSE over pooled valid positions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def _as_arrays(pred, label) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(label, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise MetricError(f"prediction/label length mismatch: {p.size} vs {y.size}")
    if p.size == 0:
        raise MetricError("empty buffer")
    if not np.isin(y, (0.0, 1.0)).all():
        raise MetricError("labels must be 0 or 1")
    return p, y


def auc(pred, label) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted half."""
    p, y = _as_arrays(pred, label)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative labels")
    ranks = rankdata(p)  # average ranks resolve ties as half-wins
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def acc(pred, label, threshold: float = 0.5) -> float:
    p, y = _as_arrays(pred, label)
    return float(((p >= threshold).astype(np.float64) == y).mean())


def rmse(pred, label) -> float:
    p, y = _as_arrays(pred, label)
    return float(np.sqrt(np.mean((p - y) ** 2)))


@dataclass
class EvalBuffer:
    """Pooled ``(prediction, label)`` pairs; merge shards with ``extend``."""

    predictions: list[np.ndarray] = field(default_factory=list)
    labels: list[np.ndarray] = field(default_factory=list)

    def add(self, pred, label, mask=None) -> None:
        pred = np.asarray(pred, dtype=np.float64)
        label = np.asarray(label, dtype=np.float64)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            pred, label = pred[mask], label[mask]
        self.predictions.append(pred.ravel())
        self.labels.append(label.ravel())

    def extend(self, other: "EvalBuffer") -> None:
        self.predictions.extend(other.predictions)
        self.labels.extend(other.labels)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.predictions:
            return np.empty(0), np.empty(0)
        return np.concatenate(self.predictions), np.concatenate(self.labels)

    def __len__(self) -> int:
        return sum(len(p) for p in self.predictions)

    def auc(self) -> float:
        return auc(*self.arrays())

    def acc(self) -> float:
        return acc(*self.arrays())

    def rmse(self) -> float:
        return rmse(*self.arrays())

    def summary(self) -> dict[str, float]:
        return {"auc": self.auc(), "acc": self.acc(), "rmse": self.rmse()}

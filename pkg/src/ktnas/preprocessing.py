"""Train-split standardization of the continuous streams."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import CONTINUOUS, WindowSet
from .validation import check_window_set


def _content_mask(windows: WindowSet) -> np.ndarray:
    # position 0 carries the start token of every shifted stream; padding is
    # never data
    mask = windows.valid_mask.copy()
    mask[:, 0] = False
    return mask


class FeatureScaler(BaseEstimator, TransformerMixin):
    """Standardize ``cont_ela`` / ``cont_lag`` with statistics from the
    windows passed to `fit`.

    Start-token and padding positions stay exactly 0.
    """

    def __init__(self, features=tuple(sorted(CONTINUOUS)), eps: float = 1e-8):
        self.features = features
        self.eps = eps

    def fit(self, X: WindowSet, y=None) -> "FeatureScaler":
        check_window_set(X)
        mask = _content_mask(X)
        self.mean_ = {}
        self.scale_ = {}
        for name in self.features:
            vals = X.features[name][mask]
            self.mean_[name] = float(vals.mean()) if vals.size else 0.0
            sd = float(vals.std()) if vals.size else 1.0
            self.scale_[name] = sd if sd > self.eps else 1.0
        return self

    def transform(self, X: WindowSet) -> WindowSet:
        check_is_fitted(self, ["mean_", "scale_"])
        check_window_set(X)
        mask = _content_mask(X)
        feats = dict(X.features)
        for name in self.features:
            arr = np.zeros_like(X.features[name], dtype=np.float64)
            arr[mask] = (X.features[name][mask] - self.mean_[name]) / self.scale_[name]
            feats[name] = arr
        return WindowSet(feats, X.valid_mask, X.target, X.student_ids)

    def to_json(self) -> dict:
        check_is_fitted(self, ["mean_", "scale_"])
        return {"mean": self.mean_, "scale": self.scale_}

    @classmethod
    def from_json(cls, payload: dict) -> "FeatureScaler":
        obj = cls(features=tuple(payload["mean"]))
        obj.mean_ = {k: float(v) for k, v in payload["mean"].items()}
        obj.scale_ = {k: float(v) for k, v in payload["scale"].items()}
        return obj

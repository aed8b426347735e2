"""Shared pieces of the classifiers: standardisation, predictions, JSON I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..market import Direction

FORMAT_VERSION = 1


class LayoutMismatch(ValueError):
    pass


def laplace_prior(y) -> float:
    """Add-one smoothed share of the positive class."""
    y = np.asarray(y)
    return (float(np.sum(y == 1)) + 1.0) / (len(y) + 2.0)


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


@dataclass(frozen=True)
class Standardizer:
    """Per-column shift/scale; columns flagged as prices pass through unchanged."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, price_mask=None) -> "Standardizer":
        X = np.asarray(X, float)
        F = X.shape[1]
        pm = np.zeros(F, bool) if price_mask is None else np.asarray(price_mask, bool)
        if len(pm) != F:
            raise LayoutMismatch("price mask length differs from the feature count")
        mean = np.zeros(F)
        scale = np.ones(F)
        exog = ~pm
        if exog.any() and len(X):
            mean[exog] = X[:, exog].mean(axis=0)
            sd = X[:, exog].std(axis=0)
            scale[exog] = np.where(sd > 1e-12, sd, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, n_features: int) -> "Standardizer":
        return cls(np.zeros(n_features), np.ones(n_features))

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], float), np.array(d["scale"], float))


class Classifier:
    """Base for fitted models. Subclasses implement ``_raw_proba`` and ``_payload``."""

    kind = "base"

    def __init__(self, layout: Sequence[str] | None = None, degenerate: bool = False):
        self.layout = tuple(layout) if layout is not None else None
        self.degenerate = degenerate

    @property
    def n_features(self) -> int:
        raise NotImplementedError

    def check_layout(self, X, layout: Sequence[str] | None = None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.n_features:
            raise LayoutMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        if layout is not None and self.layout is not None and tuple(layout) != self.layout:
            raise LayoutMismatch("feature layout differs from the training layout")
        return X

    def predict_proba(self, X, layout: Sequence[str] | None = None) -> np.ndarray:
        """Probability of an upward move for every row of ``X``."""
        return self._raw_proba(self.check_layout(X, layout))

    def _raw_proba(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _payload(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": self.kind,
                "layout": list(self.layout) if self.layout is not None else None,
                "degenerate": self.degenerate, **self._payload()}


@dataclass(frozen=True)
class Prediction:
    direction: Direction
    signal_strength: float
    p_up: float
    product_start: int | None = None
    forecast_time: int | None = None
    period: str | None = None
    fold: int | None = None

    def __post_init__(self):
        if not 0.5 <= self.signal_strength <= 1.0:
            raise ValueError("signal strength must lie in [0.5, 1]")


def directions(p_up) -> np.ndarray:
    """1 for up, 0 for down; exactly 0.5 counts as down."""
    return (np.asarray(p_up) > 0.5).astype(np.int8)


def strengths(p_up) -> np.ndarray:
    p = np.asarray(p_up, float)
    return np.maximum(p, 1.0 - p)


def predict(model: Classifier, features, layout: Sequence[str] | None = None, **meta) -> Prediction:
    """Single-sample prediction. ``features`` may be a ``FeatureVector`` or an array."""
    if hasattr(features, "layout"):
        layout = [d.name for d in features.layout]
        features = features.values
    p = float(model.predict_proba(np.asarray(features, float)[None, :], layout)[0])
    up = p > 0.5
    return Prediction(Direction.UP if up else Direction.DOWN, max(p, 1.0 - p), p, **meta)


_REGISTRY: dict[str, type] = {}


def register(cls):
    _REGISTRY[cls.kind] = cls
    return cls


def model_from_dict(d: dict) -> Classifier:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    try:
        cls = _REGISTRY[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown model kind {d.get('kind')!r}") from None
    return cls.from_dict(d)


def save_model(model: Classifier, path) -> None:
    # json writes floats with repr, which round-trips binary64 exactly
    Path(path).write_text(json.dumps(model.to_dict(), indent=1, allow_nan=False) + "\n")


def load_model(path) -> Classifier:
    return model_from_dict(json.loads(Path(path).read_text()))

"""Walk-forward evaluation: weekly test folds, per-period models, prediction tables."""
from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .evaluation import PREDICTION_COLUMNS, pnl_of
from .features import FeatureConfig, FeatureEngine, SampleSet, assemble
from .market import MarketDataset, PeriodId, to_epoch
from .models import Classifier, directions, fit_model, strengths

log = logging.getLogger(__name__)

DAY = timedelta(days=1)


class LeakageError(AssertionError):
    pass


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int
    test_start: datetime
    test_end: datetime
    train_start: datetime
    train_end: datetime

    def __post_init__(self):
        if not (self.train_start < self.train_end <= self.test_start < self.test_end):
            raise ValueError(f"fold {self.fold_index}: windows out of order")

    @property
    def buffer(self) -> timedelta:
        return self.test_start - self.train_end

    def epoch_bounds(self):
        return tuple(to_epoch(x) for x in (self.train_start, self.train_end,
                                           self.test_start, self.test_end))


def make_folds(test_range: tuple[datetime, datetime], n_folds: int, train_days: int = 30,
               buffer_days: int = 1, test_days: int = 7, data_start: datetime | None = None,
               min_train_days: float | None = None) -> list[FoldSpec]:
    """Consecutive test windows of ``test_days`` from ``test_range[0]``.

    Training covers [test_start - buffer - train_days, test_start - buffer).
    With ``data_start`` the window is clipped to the available history and a
    fold whose clipped window is shorter than ``min_train_days`` (default:
    the full ``train_days``) is dropped with a warning.
    """
    start, end = test_range
    span = timedelta(days=test_days)
    if n_folds < 1:
        raise ValueError("need at least one fold")
    if end - start < n_folds * span:
        raise ValueError(f"test range {start}..{end} is shorter than {n_folds} x {test_days} days")
    need = timedelta(days=train_days if min_train_days is None else min_train_days)
    folds = []
    for k in range(n_folds):
        t0 = start + k * span
        train_end = t0 - buffer_days * DAY
        train_start = train_end - train_days * DAY
        if data_start is not None and train_start < data_start:
            train_start = data_start
        if train_end - train_start < need or train_end <= train_start:
            log.warning("fold %d dropped: only %s of training history", k,
                        max(train_end - train_start, timedelta(0)))
            continue
        folds.append(FoldSpec(k, t0, t0 + span, train_start, train_end))
    return folds


@dataclass(frozen=True)
class ModelSpec:
    name: str                   # label in outputs
    kind: str                   # "logistic" or "pls_gbdt"
    params: tuple = ()          # sorted (key, value) pairs

    @classmethod
    def of(cls, kind: str, name: str | None = None, **params) -> "ModelSpec":
        return cls(name or kind, kind, tuple(sorted(params.items())))


@dataclass
class BacktestRun:
    config_digest: str
    folds: list[FoldSpec]
    predictions: pd.DataFrame
    skips: dict = field(default_factory=dict)        # (fold, period, fs) -> Counter of reasons
    labeled: dict = field(default_factory=dict)      # (fold, period, fs) -> labeled grid points
    labeled_skipped: dict = field(default_factory=dict)
    degenerate: list = field(default_factory=list)   # (fold, period, fs, model) flagged fits
    models: dict = field(default_factory=dict)       # (fold, period, fs, model) -> Classifier

    def skip_table(self) -> pd.DataFrame:
        rows = [{"fold": f, "period": p, "feature_set": s, "reason": r, "count": c}
                for (f, p, s), cnt in sorted(self.skips.items()) for r, c in sorted(cnt.items())]
        return pd.DataFrame(rows, columns=["fold", "period", "feature_set", "reason", "count"])


def canonical_order(ps: np.ndarray, ft: np.ndarray) -> np.ndarray:
    return np.lexsort((ft, ps))


def _window(samples: SampleSet, lo: int, hi: int, labeled_only: bool = True) -> np.ndarray:
    m = (samples.forecast_time >= lo) & (samples.forecast_time < hi)
    if labeled_only:
        m &= samples.labeled
    idx = np.flatnonzero(m)
    return idx[canonical_order(samples.product_start[idx], samples.forecast_time[idx])]


def check_fold_hygiene(samples: SampleSet, train_idx, test_idx, fold: FoldSpec) -> None:
    if not len(train_idx) or not len(test_idx):
        return
    last_train = samples.forecast_time[train_idx].max()
    first_test = samples.forecast_time[test_idx].min()
    if last_train + int(fold.buffer.total_seconds()) > first_test:
        raise LeakageError(f"fold {fold.fold_index}: training data reaches into the buffer")


def _fit_and_predict(samples: SampleSet, fold: FoldSpec, spec: ModelSpec):
    tr0, tr1, te0, te1 = fold.epoch_bounds()
    train_idx = _window(samples, tr0, tr1)
    test_idx = _window(samples, te0, te1)
    check_fold_hygiene(samples, train_idx, test_idx, fold)
    tr = samples.subset(train_idx)
    names = [d.name for d in samples.layout]
    model = fit_model(spec.kind, tr.X, tr.labels.astype(float), target=tr.target_z,
                      price_mask=samples.price_mask, layout=names, **dict(spec.params))
    te = samples.subset(test_idx)
    p = model.predict_proba(te.X, names) if len(te) else np.zeros(0)
    up = directions(p)
    labels = te.labels
    frame = pd.DataFrame({
        "fold": fold.fold_index,
        "period": samples.period.value,
        "feature_set": samples.feature_set.value,
        "model": spec.name,
        "product_start": te.product_start,
        "forecast_time": te.forecast_time,
        "label": np.where(labels == 1, "up", "down"),
        "direction": np.where(up == 1, "up", "down"),
        "signal_strength": strengths(p),
        "reference_price": te.reference,
        "future_price": te.future,
        "pnl": pnl_of(up, te.reference, te.future),
    }, columns=PREDICTION_COLUMNS)
    return model, frame, len(train_idx) == 0


def _test_skips(samples: SampleSet, fold: FoldSpec) -> tuple[Counter, int, int]:
    """Skip reasons in the test window, labeled grid points, and labeled points skipped."""
    _, _, te0, te1 = fold.epoch_bounds()
    sk = samples.skipped
    ft = sk.get("forecast_time", np.zeros(0, np.int64))
    m = (ft >= te0) & (ft < te1)
    counts = Counter(sk["reason"][m].tolist()) if m.any() else Counter()
    in_test = (samples.forecast_time >= te0) & (samples.forecast_time < te1)
    unlabeled = int((in_test & ~samples.labeled).sum()) + int((~sk["labeled"][m]).sum() if m.any() else 0)
    if unlabeled:
        counts["unlabeled"] += unlabeled
    labeled_skipped = int(sk["labeled"][m].sum()) if m.any() else 0
    return counts, int((in_test & samples.labeled).sum()) + labeled_skipped, labeled_skipped


def run(samples: Mapping[tuple, SampleSet], folds: Sequence[FoldSpec],
        models: Sequence[ModelSpec], config_digest: str = "", threads: int = 1,
        keep_models: bool = False) -> BacktestRun:
    """Fit every (fold, period, feature set, model) and predict its test week.

    ``samples`` maps (period, feature_set) to assembled samples covering all
    fold windows. Output rows are sorted by fold, period, feature set, model,
    product and forecast time regardless of scheduling.
    """
    keys = sorted(samples, key=lambda k: (samples[k].period.value, samples[k].feature_set.value))
    tasks = [(f, k, m) for f in folds for k in keys for m in models]

    def work(task):
        fold, key, spec = task
        return _fit_and_predict(samples[key], fold, spec)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    res = BacktestRun(config_digest, list(folds), pd.DataFrame(columns=PREDICTION_COLUMNS))
    frames = []
    for (fold, key, spec), (model, frame, empty) in zip(tasks, results):
        s = samples[key]
        tag = (fold.fold_index, s.period.value, s.feature_set.value)
        if tag not in res.skips:
            res.skips[tag], res.labeled[tag], res.labeled_skipped[tag] = _test_skips(s, fold)
        if empty or model.degenerate:
            res.degenerate.append(tag + (spec.name,))
            log.warning("fold %d %s %s %s: degenerate training set", *tag, spec.name)
        if keep_models:
            res.models[tag + (spec.name,)] = model
        frames.append(frame)
    if frames:
        preds = pd.concat(frames, ignore_index=True)
        preds = preds.sort_values(["fold", "period", "feature_set", "model", "product_start",
                                   "forecast_time"], kind="stable", ignore_index=True)
        res.predictions = preds
    return res


def conservation_gaps(result: BacktestRun) -> dict:
    """(fold, period, fs, model) -> labeled - predictions - labeled skips; all zero when sound."""
    preds = result.predictions
    counts = preds.groupby(["fold", "period", "feature_set", "model"]).size().to_dict()
    models = sorted(preds["model"].unique()) if len(preds) else []
    return {tag + (m,): n - counts.get(tag + (m,), 0) - result.labeled_skipped[tag]
            for tag, n in result.labeled.items() for m in models}


def run_on_dataset(dataset: MarketDataset, feature_sets: Iterable, periods: Iterable,
                   folds: Sequence[FoldSpec], models: Sequence[ModelSpec],
                   feature_config: FeatureConfig = FeatureConfig(), config_digest: str = "",
                   threads: int = 1) -> BacktestRun:
    engine = FeatureEngine(dataset, feature_config)
    samples = {(PeriodId.parse(p), fs): assemble(dataset, fs, p, config=feature_config,
                                                 engine=engine)
               for p in periods for fs in feature_sets}
    return run(samples, folds, models, config_digest, threads)

"""Price, order-book and exogenous features, labels and sample assembly.

Scalar helpers (``vwap``, ``last4_price``, ``lag_vwap_vector`` ...) mirror the
definitions one value at a time. :func:`assemble` computes the same
quantities vectorised over the forecast grid of every product through
:class:`TapeStats`.
"""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Iterator, Sequence

import numpy as np

from .market import (
    MINUTE, PERIOD_HOURLY_NEIGHBORS, WINDOW_FIRST_LEAD, WINDOW_LAST_LEAD, Direction,
    Horizon, LobSnapshot, MarketDataset, PeriodId, Product, Trade, TradeTape,
    forecast_offsets, from_epoch, neighbors_for_period, period_of, to_epoch,
)


class FeatureUnavailable(LookupError):
    """A feature cannot be computed; ``reason`` is the skip-counter key."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class ConfigurationError(ValueError):
    """A feature set asks for products that do not trade in the period."""


# skip reasons; the first two leave a grid point without a label
NO_REFERENCE = "no_reference"
NO_FUTURE_TRADES = "no_future_trades"
DEGENERATE_NORMALIZATION = "degenerate_normalization"
NEIGHBOR_UNAVAILABLE = "neighbor_unavailable"
LOB_UNAVAILABLE = "lob_unavailable"
FUNDAMENTALS_UNAVAILABLE = "fundamentals_unavailable"
IMBALANCE_UNAVAILABLE = "imbalance_unavailable"


@dataclass(frozen=True)
class FeatureConfig:
    h_max: int = 10
    delta_s: int = 60
    first_lead_min: int = WINDOW_FIRST_LEAD
    last_lead_min: int = WINDOW_LAST_LEAD
    horizon_s: int = 300
    lob_depths: tuple[int, ...] = (1, 5, 10)
    min_vwsd: float = 1e-9
    selected_p2to1_include_h_plus2: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lob_depths", tuple(self.lob_depths))
        if self.h_max < 1 or self.delta_s <= 0 or self.horizon_s <= 0:
            raise ValueError("h_max, delta and horizon must be positive")
        if self.first_lead_min < self.last_lead_min:
            raise ValueError("forecast grid must start before it ends")
        if self.last_lead_min * MINUTE - self.horizon_s < 30 * MINUTE:
            raise ValueError("grid end + horizon must not pass 30 minutes before delivery")


# --------------------------------------------------------------------------
# Scalar definitions
# --------------------------------------------------------------------------

def _vp(trades) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trades, tuple) and len(trades) == 2 and isinstance(trades[0], np.ndarray):
        return np.asarray(trades[0], float), np.asarray(trades[1], float)
    v, p = [], []
    for tr in trades:
        if isinstance(tr, Trade):
            v.append(tr.volume)
            p.append(tr.price)
        else:
            v.append(tr[0])
            p.append(tr[1])
    return np.asarray(v, float), np.asarray(p, float)


def vwap(trades) -> float:
    """Volume-weighted average price of ``Trade`` objects or ``(volume, price)`` pairs."""
    v, p = _vp(trades)
    if not len(v):
        raise FeatureUnavailable(NO_REFERENCE, "VWAP of an empty trade set")
    return float(np.dot(v, p) / v.sum())


def vwsd(trades) -> float:
    """Volume-weighted standard deviation with the (n-1)/n small-sample factor."""
    v, p = _vp(trades)
    n = len(v)
    if n < 2:
        raise FeatureUnavailable(DEGENERATE_NORMALIZATION, "VWSD needs at least two trades")
    mu = np.dot(v, p) / v.sum()
    return float(math.sqrt(np.dot(v, (p - mu) ** 2) / ((n - 1) / n * v.sum())))


def last4_price(product: Product, t: datetime, dataset: MarketDataset) -> float:
    """VWAP of the (up to) four most recent trades at or before ``t``."""
    tape = dataset.trades.get(product)
    stats = TapeStats(tape) if tape is not None and len(tape) else None
    if stats is None:
        raise FeatureUnavailable(NO_REFERENCE, str(product))
    val = stats.last4(np.array([to_epoch(t)]))[0]
    if np.isnan(val):
        raise FeatureUnavailable(NO_REFERENCE, f"{product} has no trades before {t}")
    return float(val)


def lag_vwap_vector(product: Product, t: datetime, dataset: MarketDataset,
                    h_max: int = 10, delta: timedelta = timedelta(minutes=1)) -> np.ndarray:
    """Lagged one-interval VWAPs, newest first, with forward/neutral fill."""
    tape = dataset.trades.get(product)
    if tape is None or not len(tape):
        raise FeatureUnavailable(NEIGHBOR_UNAVAILABLE, f"{product} never traded")
    stats = TapeStats(tape)
    t_eff = min(to_epoch(t), product.start_s)
    out = stats.lag_matrix(np.array([t_eff]), h_max, int(delta.total_seconds()))[0]
    if np.isnan(out).any():
        raise FeatureUnavailable(NEIGHBOR_UNAVAILABLE, f"{product} has no trades before {t}")
    return out


def normalization_stats(product: Product, t: datetime, dataset: MarketDataset,
                        min_vwsd: float = 1e-9) -> tuple[float, float]:
    tape = dataset.trades.get(product)
    if tape is None or len(tape) < 2:
        raise FeatureUnavailable(DEGENERATE_NORMALIZATION, f"{product}: too few trades")
    n, mu, sd = TapeStats(tape).all_stats(np.array([to_epoch(t)]))
    if n[0] < 2 or not sd[0] > min_vwsd:
        raise FeatureUnavailable(DEGENERATE_NORMALIZATION, f"{product} at {t}")
    return float(mu[0]), float(sd[0])


def normalize(x, product: Product, t: datetime, dataset: MarketDataset,
              min_vwsd: float = 1e-9):
    """Standard score of price(s) ``x`` against all trades of ``product`` up to ``t``."""
    mu, sd = normalization_stats(product, t, dataset, min_vwsd)
    return (np.asarray(x, float) - mu) / sd if np.ndim(x) else (float(x) - mu) / sd


class LobMode(str, enum.Enum):
    TOP_ROWS = "top_rows"
    TOP_MW = "top_mw"


def side_vwaps(px: np.ndarray, vol: np.ndarray, mode: LobMode | str,
               depths: Sequence[int] = (1, 5, 10)) -> np.ndarray:
    """Depth VWAPs of ladders ``px``/``vol`` (rows x levels, NaN padded).

    Returns rows x len(depths); NaN where the side is empty.
    """
    mode = LobMode(mode)
    px = np.atleast_2d(np.asarray(px, float))
    vol = np.atleast_2d(np.asarray(vol, float))
    filled = ~np.isnan(px)
    v = np.where(filled, vol, 0.0)
    p = np.where(filled, px, 0.0)
    cum_before = np.cumsum(v, axis=1) - v
    level = np.arange(px.shape[1])
    out = np.empty((px.shape[0], len(depths)))
    for j, d in enumerate(depths):
        if mode is LobMode.TOP_ROWS:
            w = np.where(level[None, :] < d, v, 0.0)
        else:
            w = np.clip(d - cum_before, 0.0, v)
        tot = w.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, j] = np.where(tot > 0, (w * p).sum(axis=1) / tot, np.nan)
    return out


def lob_features(snapshot: LobSnapshot, mode: LobMode | str,
                 depths: Sequence[int] = (1, 5, 10),
                 fallback: float | None = None) -> np.ndarray:
    """Bid then ask VWAPs at each depth; an empty side takes ``fallback``."""
    bids = np.array(snapshot.bids, float).reshape(-1, 2)
    asks = np.array(snapshot.asks, float).reshape(-1, 2)
    if not len(bids) and not len(asks):
        raise FeatureUnavailable(LOB_UNAVAILABLE, "both sides of the book are empty")
    parts = []
    for side in (bids, asks):
        if len(side):
            parts.append(side_vwaps(side[:, 0][None], side[:, 1][None], mode, depths)[0])
        elif fallback is None:
            raise FeatureUnavailable(LOB_UNAVAILABLE, "empty side and no fallback price")
        else:
            parts.append(np.full(len(depths), float(fallback)))
    return np.concatenate(parts)


def imbalance_feature(t: datetime, dataset: MarketDataset) -> float:
    rec = dataset.imbalance_asof(t)
    if rec is None:
        raise FeatureUnavailable(IMBALANCE_UNAVAILABLE, f"nothing published by {t}")
    return rec.saldo_mw


FUNDAMENTAL_NAMES = ("load_da", "solar_da", "solar_id", "wind_on_da", "wind_on_id",
                     "wind_off_da", "wind_off_id")


def fundamentals_features(product: Product, dataset: MarketDataset,
                          flags: Counter | None = None) -> np.ndarray:
    """Day-ahead and intraday load/VRE forecasts for the product's delivery hour."""
    hour = product.delivery_start.replace(minute=0)
    da = dataset.fundamental(hour, Horizon.DAY_AHEAD)
    if da is None:
        raise FeatureUnavailable(FUNDAMENTALS_UNAVAILABLE, str(hour))
    intra = dataset.fundamental(hour, Horizon.INTRADAY)
    if intra is None:
        intra = da
        if flags is not None:
            flags["intraday_fundamentals_from_day_ahead"] += 1
    return np.array([da.load_mw, da.solar_mw, intra.solar_mw, da.wind_onshore_mw,
                     intra.wind_onshore_mw, da.wind_offshore_mw, intra.wind_offshore_mw])


def build_label(product: Product, t: datetime, dataset: MarketDataset,
                horizon: timedelta = timedelta(minutes=5)) -> tuple[float, float, Direction]:
    """Reference (last four trades), future (next-horizon VWAP) and direction."""
    tape = dataset.trades.get(product)
    if tape is None or not len(tape):
        raise FeatureUnavailable(NO_REFERENCE, str(product))
    stats = TapeStats(tape)
    t_s = np.array([to_epoch(t)])
    ref = stats.last4(t_s)[0]
    if np.isnan(ref):
        raise FeatureUnavailable(NO_REFERENCE, f"{product} at {t}")
    fut = stats.future_vwap(t_s, int(horizon.total_seconds()))[0]
    if np.isnan(fut):
        raise FeatureUnavailable(NO_FUTURE_TRADES, f"{product} after {t}")
    return float(ref), float(fut), Direction.UP if fut > ref else Direction.DOWN


# --------------------------------------------------------------------------
# Vectorised tape statistics
# --------------------------------------------------------------------------

class TapeStats:
    """Prefix sums over one trade tape for O(log n) interval statistics.

    Prices are shifted by the first trade price before accumulation to limit
    cancellation in the second-moment sums.
    """

    def __init__(self, tape: TradeTape):
        self.times = tape.times
        self.v = tape.volumes
        self.p = tape.prices
        self.p0 = float(tape.prices[0]) if len(tape) else 0.0
        dp = self.p - self.p0
        self.cv = np.r_[0.0, np.cumsum(self.v)]
        self.c1 = np.r_[0.0, np.cumsum(self.v * dp)]
        self.c2 = np.r_[0.0, np.cumsum(self.v * dp * dp)]

    def count(self, t_s) -> np.ndarray:
        return np.searchsorted(self.times, t_s, side="right")

    def range_vwap(self, lo, hi) -> np.ndarray:
        vol = self.cv[hi] - self.cv[lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(hi > lo, self.p0 + (self.c1[hi] - self.c1[lo]) / vol, np.nan)

    def all_stats(self, t_s):
        """Trade count, VWAP and VWSD of all trades at or before ``t_s``."""
        n = self.count(t_s)
        vol, s1, s2 = self.cv[n], self.c1[n], self.c2[n]
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(n > 0, self.p0 + s1 / vol, np.nan)
            num = np.maximum(s2 - s1 * s1 / vol, 0.0)
            sd = np.where(n > 1, np.sqrt(num / ((n - 1) / n * vol)), np.nan)
        return n, mu, sd

    def last4(self, t_s) -> np.ndarray:
        n = self.count(t_s)
        idx = n[:, None] - 4 + np.arange(4)[None, :]
        ok = idx >= 0
        safe = np.where(ok, idx, 0)
        v = np.where(ok, self.v[safe] if len(self.v) else 0.0, 0.0)
        p = np.where(ok, self.p[safe] if len(self.p) else 0.0, 0.0)
        tot = v.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, (v * p).sum(axis=1) / tot, np.nan)

    def future_vwap(self, t_s, horizon_s: int) -> np.ndarray:
        t_s = np.asarray(t_s)
        return self.range_vwap(self.count(t_s), self.count(t_s + horizon_s))

    def lag_matrix(self, t_s, h_max: int, delta_s: int) -> np.ndarray:
        """Rows of lagged VWAPs over closed windows ``[t-(h+1)d, t-hd]``.

        An empty window takes the next-older non-empty window of the same
        row. Entries with no older non-empty window take the all-history
        VWAP at ``t`` (NaN if the tape has no trade by then).
        """
        t_s = np.asarray(t_s, dtype=np.int64)[:, None]
        h = np.arange(h_max, dtype=np.int64)[None, :]
        lo = np.searchsorted(self.times, t_s - (h + 1) * delta_s, side="left")
        hi = np.searchsorted(self.times, t_s - h * delta_s, side="right")
        out = self.range_vwap(lo, hi)
        empty = hi <= lo
        if empty.any():
            # nearest valid entry at an equal or larger lag, via a running max
            # over the reversed row
            rev_valid = ~empty[:, ::-1]
            pos = np.where(rev_valid, np.arange(h_max)[None, :], -1)
            src = np.maximum.accumulate(pos, axis=1)[:, ::-1]
            src_h = h_max - 1 - src
            rows = np.arange(out.shape[0])[:, None]
            filled = out[rows, np.where(src >= 0, src_h, 0)]
            _, mu, _ = self.all_stats(t_s[:, 0])
            out = np.where(src >= 0, filled, mu[:, None])
        return out


# --------------------------------------------------------------------------
# Feature sets and layouts
# --------------------------------------------------------------------------

class FeatureSetId(str, enum.Enum):
    CURRENT = "current"
    FUNDAMENTALS = "fundamentals"
    H_M1 = "h_m1"
    H_M2 = "h_m2"
    H_P1 = "h_p1"
    H_P2 = "h_p2"
    QH_CURRENT = "qh_current"
    QH_M1 = "qh_m1"
    QH_M2 = "qh_m2"
    QH_P1 = "qh_p1"
    QH_P2 = "qh_p2"
    IMBALANCE = "imbalance"
    LOB_ROWS = "lob_rows"
    LOB_MW = "lob_mw"
    SELECTED = "selected"

    @classmethod
    def parse(cls, value: "str | FeatureSetId") -> "FeatureSetId":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown feature set {value!r}") from None


# exogenous block per feature set: (kind, argument)
BLOCKS: dict[FeatureSetId, tuple[str, object]] = {
    FeatureSetId.FUNDAMENTALS: ("fundamentals", None),
    FeatureSetId.H_M1: ("hourly", -1),
    FeatureSetId.H_M2: ("hourly", -2),
    FeatureSetId.H_P1: ("hourly", 1),
    FeatureSetId.H_P2: ("hourly", 2),
    FeatureSetId.QH_CURRENT: ("quarters", 0),
    FeatureSetId.QH_M1: ("quarters", -1),
    FeatureSetId.QH_M2: ("quarters", -2),
    FeatureSetId.QH_P1: ("quarters", 1),
    FeatureSetId.QH_P2: ("quarters", 2),
    FeatureSetId.IMBALANCE: ("imbalance", None),
    FeatureSetId.LOB_ROWS: ("lob", LobMode.TOP_ROWS),
    FeatureSetId.LOB_MW: ("lob", LobMode.TOP_MW),
}

_SELECTED_EXCLUDED = {
    PeriodId.P3to2: {FeatureSetId.FUNDAMENTALS, FeatureSetId.H_P1, FeatureSetId.H_P2,
                     FeatureSetId.QH_P2, FeatureSetId.IMBALANCE},
    PeriodId.P2to1: {FeatureSetId.FUNDAMENTALS, FeatureSetId.H_P1,
                     FeatureSetId.QH_P2, FeatureSetId.IMBALANCE},
}
_SELECTED_P1 = (FeatureSetId.QH_CURRENT, FeatureSetId.QH_P2,
                FeatureSetId.LOB_ROWS, FeatureSetId.LOB_MW)


def _offset_label(k: int) -> str:
    return "cur" if k == 0 else f"{'m' if k < 0 else 'p'}{abs(k)}"


def is_available(feature_set: FeatureSetId | str, period: PeriodId | str) -> bool:
    """False for the product/period pairs that do not trade together ("N/A")."""
    fs, period = FeatureSetId.parse(feature_set), PeriodId.parse(period)
    kind, arg = BLOCKS.get(fs, ("", None))
    if kind in ("hourly", "quarters") and arg != 0:
        return arg in PERIOD_HOURLY_NEIGHBORS[period]
    return True


def exogenous_sets(feature_set: FeatureSetId | str, period: PeriodId | str,
                   config: FeatureConfig = FeatureConfig()) -> list[FeatureSetId]:
    """Exogenous blocks added to the current-product block, in layout order."""
    fs, period = FeatureSetId.parse(feature_set), PeriodId.parse(period)
    if fs is FeatureSetId.CURRENT:
        return []
    if fs is FeatureSetId.SELECTED:
        if period is PeriodId.P1toHalf:
            return list(_SELECTED_P1)
        excluded = set(_SELECTED_EXCLUDED[period])
        if period is PeriodId.P2to1 and not config.selected_p2to1_include_h_plus2:
            excluded.add(FeatureSetId.H_P2)
        return [s for s in BLOCKS if s not in excluded and is_available(s, period)]
    if not is_available(fs, period):
        raise ConfigurationError(f"feature set {fs.value} is N/A in period {period.value}")
    return [fs]


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    source: str      # product or data source relative to the current product
    lag: int         # lag index, -1 where not applicable
    kind: str        # "price" (already z-scored) or "exog" (raw units)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[FeatureDescriptor, ...]

    def __post_init__(self):
        if len(self.values) != len(self.layout):
            raise ValueError("layout and values differ in length")


def _block_layout(fs: FeatureSetId, config: FeatureConfig) -> list[FeatureDescriptor]:
    kind, arg = BLOCKS[fs]
    lags = range(config.h_max)
    if kind == "hourly":
        src = f"H{arg:+d}h"
        return [FeatureDescriptor(f"h_{_offset_label(arg)}_lag{h}", src, h, "price") for h in lags]
    if kind == "quarters":
        out = []
        for q in range(4):
            src = f"QH{arg:+d}h+{15 * q}m"
            out += [FeatureDescriptor(f"qh_{_offset_label(arg)}_q{q}_lag{h}", src, h, "price")
                    for h in lags]
        return out
    if kind == "lob":
        tag = "rows" if arg is LobMode.TOP_ROWS else "mw"
        return [FeatureDescriptor(f"lob_{tag}_{side}_{d}", f"LOB-{side}", -1, "price")
                for side in ("bid", "ask") for d in config.lob_depths]
    if kind == "fundamentals":
        return [FeatureDescriptor(f"fund_{n}", "fundamentals", -1, "exog")
                for n in FUNDAMENTAL_NAMES]
    return [FeatureDescriptor("imb_saldo", "imbalance", -1, "exog")]


def feature_layout(feature_set: FeatureSetId | str, period: PeriodId | str,
                   config: FeatureConfig = FeatureConfig()) -> tuple[FeatureDescriptor, ...]:
    layout = [FeatureDescriptor("cur_last4", "H+0h", -1, "price")]
    layout += [FeatureDescriptor(f"cur_lag{h}", "H+0h", h, "price") for h in range(config.h_max)]
    for fs in exogenous_sets(feature_set, period, config):
        layout += _block_layout(fs, config)
    return tuple(layout)


# --------------------------------------------------------------------------
# Samples
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    product: Product
    forecast_time: datetime
    period: PeriodId
    features: FeatureVector
    reference_price: float
    future_price: float | None
    label: Direction | None

    def __post_init__(self):
        if (self.label is None) != (self.future_price is None):
            raise ValueError("label present iff future price present")


LABEL_UP, LABEL_DOWN, LABEL_NONE = 1, 0, -1


@dataclass
class SampleSet:
    """Columnar samples of one (period, feature set); rows sorted by product then time."""

    period: PeriodId
    feature_set: FeatureSetId
    layout: tuple[FeatureDescriptor, ...]
    product_start: np.ndarray      # int64 epoch seconds
    forecast_time: np.ndarray      # int64 epoch seconds
    X: np.ndarray
    reference: np.ndarray
    future: np.ndarray             # NaN when unlabeled
    norm_vwap: np.ndarray
    norm_vwsd: np.ndarray
    skipped: dict[str, np.ndarray] = field(default_factory=dict)
    flags: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.forecast_time)

    @property
    def labels(self) -> np.ndarray:
        lab = np.where(self.future > self.reference, LABEL_UP, LABEL_DOWN)
        return np.where(np.isnan(self.future), LABEL_NONE, lab).astype(np.int8)

    @property
    def labeled(self) -> np.ndarray:
        return ~np.isnan(self.future)

    @property
    def target_z(self) -> np.ndarray:
        """Future price standardised with the current product's history at t."""
        return (self.future - self.norm_vwap) / self.norm_vwsd

    @property
    def price_mask(self) -> np.ndarray:
        return np.array([d.kind == "price" for d in self.layout], dtype=bool)

    @property
    def skip_counts(self) -> Counter:
        return Counter(self.skipped.get("reason", np.array([], dtype=object)).tolist())

    def subset(self, mask) -> "SampleSet":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return SampleSet(self.period, self.feature_set, self.layout, self.product_start[idx],
                         self.forecast_time[idx], self.X[idx], self.reference[idx],
                         self.future[idx], self.norm_vwap[idx], self.norm_vwsd[idx],
                         {}, Counter())

    def sample(self, i: int) -> Sample:
        fut = None if np.isnan(self.future[i]) else float(self.future[i])
        label = None
        if fut is not None:
            label = Direction.UP if fut > self.reference[i] else Direction.DOWN
        return Sample(Product.hourly(from_epoch(self.product_start[i])),
                      from_epoch(self.forecast_time[i]), self.period,
                      FeatureVector(self.X[i].copy(), self.layout),
                      float(self.reference[i]), fut, label)

    def __iter__(self) -> Iterator[Sample]:
        return (self.sample(i) for i in range(len(self)))


class FeatureEngine:
    """Caches per-product tape statistics over one immutable dataset."""

    def __init__(self, dataset: MarketDataset, config: FeatureConfig = FeatureConfig()):
        self.dataset = dataset
        self.config = config
        self._stats: dict[Product, TapeStats | None] = {}

    def stats(self, product: Product) -> TapeStats | None:
        if product not in self._stats:
            tape = self.dataset.trades.get(product)
            self._stats[product] = TapeStats(tape) if tape is not None and len(tape) else None
        return self._stats[product]

    def _price_block(self, product: Product, t_s: np.ndarray):
        """z-scored lag vectors of one product, plus availability mask."""
        cfg = self.config
        st = self.stats(product)
        m = len(t_s)
        if st is None:
            return np.full((m, cfg.h_max), np.nan), np.zeros(m, bool)
        n, mu, sd = st.all_stats(t_s)
        ok = (n >= 2) & (sd > cfg.min_vwsd)
        t_eff = np.minimum(t_s, product.start_s)
        lags = st.lag_matrix(t_eff, cfg.h_max, cfg.delta_s)
        with np.errstate(invalid="ignore", divide="ignore"):
            z = (lags - mu[:, None]) / sd[:, None]
        return z, ok & np.isfinite(z).all(axis=1)

    def _exogenous(self, fs: FeatureSetId, product: Product, t_s: np.ndarray,
                   last4: np.ndarray, mu: np.ndarray, sd: np.ndarray, flags: Counter):
        kind, arg = BLOCKS[fs]
        m = len(t_s)
        if kind == "hourly":
            z, ok = self._price_block(product.shifted(arg), t_s)
            return z, ok, NEIGHBOR_UNAVAILABLE
        if kind == "quarters":
            blocks, ok = [], np.ones(m, bool)
            for q in product.shifted(arg).quarters():
                z, okq = self._price_block(q, t_s)
                blocks.append(z)
                ok &= okq
            return np.hstack(blocks), ok, NEIGHBOR_UNAVAILABLE
        if kind == "lob":
            return self._lob_block(arg, product, t_s, last4, mu, sd, flags)
        if kind == "fundamentals":
            try:
                vals = fundamentals_features(product, self.dataset, flags)
            except FeatureUnavailable:
                return np.full((m, 7), np.nan), np.zeros(m, bool), FUNDAMENTALS_UNAVAILABLE
            return np.tile(vals, (m, 1)), np.ones(m, bool), FUNDAMENTALS_UNAVAILABLE
        im = self.dataset.imbalances
        vals = np.full(m, np.nan)
        if len(im):
            # publication delays vary, so the latest published quarter is the
            # running max of quarter index over publication order
            order = np.argsort(im.publish_times, kind="stable")
            newest = np.maximum.accumulate(order)
            k = np.searchsorted(im.publish_times[order], t_s, side="right") - 1
            got = k >= 0
            vals[got] = im.saldo_mw[newest[k[got]]]
        return vals[:, None], ~np.isnan(vals), IMBALANCE_UNAVAILABLE

    def _lob_block(self, mode, product, t_s, last4, mu, sd, flags):
        cfg = self.config
        m, nd = len(t_s), len(cfg.lob_depths)
        book = self.dataset.lobs.get(product)
        out = np.full((m, 2 * nd), np.nan)
        if book is None or not len(book.times):
            return out, np.zeros(m, bool), LOB_UNAVAILABLE
        idx = np.searchsorted(book.times, t_s, side="right") - 1
        have = idx >= 0
        safe = np.where(have, idx, 0)
        bid = side_vwaps(book.bid_px[safe], book.bid_vol[safe], mode, cfg.lob_depths)
        ask = side_vwaps(book.ask_px[safe], book.ask_vol[safe], mode, cfg.lob_depths)
        bid_empty, ask_empty = np.isnan(bid[:, 0]), np.isnan(ask[:, 0])
        ok = have & ~(bid_empty & ask_empty)
        fb = np.broadcast_to(last4[:, None], bid.shape)
        for empty, arr, name in ((bid_empty, bid, "bid"), (ask_empty, ask, "ask")):
            fallback = ok & empty
            if fallback.any():
                flags[f"lob_{name}_side_empty_fallback"] += int(fallback.sum())
                arr[fallback] = fb[fallback]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (np.hstack([bid, ask]) - mu[:, None]) / sd[:, None]
        return out, ok, LOB_UNAVAILABLE

    def product_rows(self, product: Product, t_s: np.ndarray, blocks: Sequence[FeatureSetId]):
        """Features, label prices and skip reasons for one product at times ``t_s``."""
        cfg = self.config
        t_s = np.asarray(t_s, dtype=np.int64)
        m = len(t_s)
        flags: Counter = Counter()
        reason = np.full(m, "", dtype=object)
        st = self.stats(product)
        if st is None:
            reason[:] = NO_REFERENCE
            empty = np.full(m, np.nan)
            return None, empty, empty, empty, empty, reason, np.zeros(m, bool), flags
        last4 = st.last4(t_s)
        future = st.future_vwap(t_s, cfg.horizon_s)
        future = np.where(np.isnan(last4), np.nan, future)
        labeled = ~np.isnan(future)
        n, mu, sd = st.all_stats(t_s)
        with np.errstate(invalid="ignore", divide="ignore"):
            cur_last4 = (last4 - mu) / sd
        lags, ok_cur = self._price_block(product, t_s)
        parts = [cur_last4[:, None], lags]
        reason[~ok_cur] = DEGENERATE_NORMALIZATION
        for fs in blocks:
            vals, ok, why = self._exogenous(fs, product, t_s, last4, mu, sd, flags)
            parts.append(vals)
            reason[(reason == "") & ~ok] = why
        reason[np.isnan(last4)] = NO_REFERENCE
        X = np.hstack(parts)
        bad = (reason == "") & ~np.isfinite(X).all(axis=1)
        reason[bad] = DEGENERATE_NORMALIZATION
        return X, last4, future, mu, sd, reason, labeled, flags


def assemble(dataset: MarketDataset, feature_set: FeatureSetId | str, period: PeriodId | str,
             time_range: tuple[datetime, datetime] | None = None,
             config: FeatureConfig = FeatureConfig(),
             engine: FeatureEngine | None = None) -> SampleSet:
    """Samples of every hourly product delivered within ``time_range``.

    ``time_range`` defaults to the dataset's range and filters on delivery
    start. Grid points without a reference price or whose mandatory features
    are unavailable are recorded in ``SampleSet.skipped``; points without
    trades in the horizon are emitted unlabeled.
    """
    fs, period = FeatureSetId.parse(feature_set), PeriodId.parse(period)
    blocks = exogenous_sets(fs, period, config)
    layout = feature_layout(fs, period, config)
    engine = engine or FeatureEngine(dataset, config)
    lo, hi = time_range or dataset.time_range
    leads = forecast_offsets(period, config.first_lead_min, config.last_lead_min)

    cols: dict[str, list] = {k: [] for k in ("ps", "ft", "X", "ref", "fut", "mu", "sd")}
    skip: dict[str, list] = {"product_start": [], "forecast_time": [], "reason": [], "labeled": []}
    flags: Counter = Counter()
    for product in dataset.hourly_products(lo, hi):
        t_s = product.start_s - leads * MINUTE
        X, ref, fut, mu, sd, reason, labeled, fl = engine.product_rows(product, t_s, blocks)
        flags.update(fl)
        keep = reason == ""
        if (~keep).any():
            skip["product_start"].append(np.full((~keep).sum(), product.start_s, np.int64))
            skip["forecast_time"].append(t_s[~keep])
            skip["reason"].append(reason[~keep])
            skip["labeled"].append(labeled[~keep])
        if keep.any():
            cols["ps"].append(np.full(keep.sum(), product.start_s, np.int64))
            cols["ft"].append(t_s[keep])
            cols["X"].append(X[keep])
            for key, arr in (("ref", ref), ("fut", fut), ("mu", mu), ("sd", sd)):
                cols[key].append(arr[keep])

    def cat(key, width=None, dtype=float):
        if cols[key]:
            return np.concatenate(cols[key])
        return np.zeros((0, width) if width is not None else 0, dtype=dtype)

    skipped = {
        "product_start": np.concatenate(skip["product_start"]) if skip["product_start"]
        else np.zeros(0, np.int64),
        "forecast_time": np.concatenate(skip["forecast_time"]) if skip["forecast_time"]
        else np.zeros(0, np.int64),
        "reason": np.concatenate(skip["reason"]) if skip["reason"] else np.zeros(0, object),
        "labeled": np.concatenate(skip["labeled"]) if skip["labeled"] else np.zeros(0, bool),
    }
    return SampleSet(period, fs, layout, cat("ps", dtype=np.int64), cat("ft", dtype=np.int64),
                     cat("X", len(layout)), cat("ref"), cat("fut"), cat("mu"), cat("sd"),
                     skipped, flags)


def feature_vector(dataset: MarketDataset, product: Product, t: datetime,
                   feature_set: FeatureSetId | str, config: FeatureConfig = FeatureConfig(),
                   engine: FeatureEngine | None = None) -> FeatureVector:
    """The feature vector of a single (product, forecast time)."""
    period = period_of(t, product)
    blocks = exogenous_sets(feature_set, period, config)
    engine = engine or FeatureEngine(dataset, config)
    X, *_, reason, _, _ = engine.product_rows(product, np.array([to_epoch(t)]), blocks)
    if reason[0]:
        raise FeatureUnavailable(reason[0], f"{product} at {t}")
    return FeatureVector(X[0], feature_layout(feature_set, period, config))

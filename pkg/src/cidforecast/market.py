"""Domain types and the time/product algebra of the continuous intraday market.

All instants are UTC. Inside numeric arrays they are stored as int64 seconds
since the Unix epoch; the public dataclasses carry timezone-aware datetimes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

UTC = timezone.utc
HOUR = timedelta(hours=1)
QUARTER = timedelta(minutes=15)
MINUTE = 60  # seconds


class DataError(ValueError):
    """Raised when market data violates a domain invariant."""


def to_epoch(ts: datetime) -> int:
    if ts.tzinfo is None:
        raise DataError(f"naive timestamp {ts!r}; all instants must be UTC-aware")
    return int(ts.timestamp())


def from_epoch(seconds: int | np.integer) -> datetime:
    return datetime.fromtimestamp(int(seconds), tz=UTC)


def utc(*args: int) -> datetime:
    """Shorthand for ``datetime(*args, tzinfo=UTC)``."""
    return datetime(*args, tzinfo=UTC)


@dataclass(frozen=True, order=True)
class Product:
    """A delivery period ``[delivery_start, delivery_start + length)``."""

    delivery_start: datetime
    length: timedelta

    def __post_init__(self):
        if self.length not in (QUARTER, HOUR):
            raise DataError(f"unsupported product length {self.length}")
        start = to_epoch(self.delivery_start)
        if start % (15 * MINUTE):
            raise DataError(f"{self.delivery_start} is not quarter-hour aligned")
        if self.length == HOUR and start % 3600:
            raise DataError(f"hourly product at {self.delivery_start} is not hour aligned")

    @classmethod
    def hourly(cls, start: datetime) -> "Product":
        return cls(start, HOUR)

    @classmethod
    def quarter(cls, start: datetime) -> "Product":
        return cls(start, QUARTER)

    @cached_property
    def start_s(self) -> int:
        return to_epoch(self.delivery_start)

    @property
    def length_min(self) -> int:
        return int(self.length.total_seconds() // 60)

    @property
    def is_hourly(self) -> bool:
        return self.length == HOUR

    def quarters(self) -> list["Product"]:
        """The four quarter-hourly products covering an hourly product."""
        if not self.is_hourly:
            raise DataError("only hourly products have constituent quarters")
        return [Product.quarter(self.delivery_start + k * QUARTER) for k in range(4)]

    def shifted(self, hours: int) -> "Product":
        return Product(self.delivery_start + timedelta(hours=hours), self.length)

    def __str__(self) -> str:
        return f"{self.delivery_start:%Y-%m-%dT%H:%MZ}/{self.length_min}m"


@dataclass(frozen=True)
class Trade:
    product: Product
    exec_time: datetime
    volume: float
    price: float
    area: str = "DE"

    def __post_init__(self):
        if self.volume <= 0:
            raise DataError(f"trade volume must be positive, got {self.volume}")
        if self.exec_time >= self.product.delivery_start:
            raise DataError(f"trade at {self.exec_time} after delivery start of {self.product}")


@dataclass(frozen=True)
class LobSnapshot:
    """Bid/ask ladders; bids best-first descending, asks best-first ascending."""

    product: Product
    time: datetime
    bids: tuple[tuple[float, float], ...] = ()
    asks: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        bids = tuple((float(p), float(v)) for p, v in self.bids)
        asks = tuple((float(p), float(v)) for p, v in self.asks)
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "asks", asks)
        validate_ladders(
            np.array([p for p, _ in bids]), np.array([v for _, v in bids]),
            np.array([p for p, _ in asks]), np.array([v for _, v in asks]),
        )


def validate_ladders(bid_px, bid_vol, ask_px, ask_vol) -> None:
    if np.any(np.diff(bid_px) > 0):
        raise DataError("bid ladder not sorted by descending price")
    if np.any(np.diff(ask_px) < 0):
        raise DataError("ask ladder not sorted by ascending price")
    if np.any(bid_vol <= 0) or np.any(ask_vol <= 0):
        raise DataError("order volumes must be positive")
    if len(bid_px) and len(ask_px) and not bid_px[0] < ask_px[0]:
        raise DataError(f"crossed book: best bid {bid_px[0]} >= best ask {ask_px[0]}")


def _validate_ladder_block(bid_px, bid_vol, ask_px, ask_vol) -> None:
    """Vectorised ``validate_ladders`` over a (snapshots x levels) block."""
    with np.errstate(invalid="ignore"):
        for px, vol, sign, side in ((bid_px, bid_vol, 1, "bid"), (ask_px, ask_vol, -1, "ask")):
            filled = ~np.isnan(px)
            if np.any(filled[:, 1:] & ~filled[:, :-1]):
                raise DataError(f"{side} ladder has gaps between levels")
            if np.any(filled & ~(vol > 0)):
                raise DataError("order volumes must be positive")
            if np.any(sign * np.diff(px, axis=1) > 0):
                raise DataError(f"{side} ladder not sorted best-first")
        both = ~np.isnan(bid_px[:, 0]) & ~np.isnan(ask_px[:, 0]) if bid_px.shape[1] else None
        if both is not None and np.any(bid_px[both, 0] >= ask_px[both, 0]):
            raise DataError("crossed book: best bid >= best ask")


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"


class Horizon(str, enum.Enum):
    DAY_AHEAD = "day_ahead"
    INTRADAY = "intraday"


@dataclass(frozen=True)
class FundamentalRecord:
    delivery_start: datetime
    horizon: Horizon
    load_mw: float | None
    solar_mw: float
    wind_onshore_mw: float
    wind_offshore_mw: float

    def __post_init__(self):
        values = [self.solar_mw, self.wind_onshore_mw, self.wind_offshore_mw]
        if self.horizon is Horizon.DAY_AHEAD:
            if self.load_mw is None:
                raise DataError("day-ahead fundamentals require a load forecast")
            values.append(self.load_mw)
        if any(v < 0 for v in values):
            raise DataError(f"negative fundamental value at {self.delivery_start}")


@dataclass(frozen=True)
class ImbalanceRecord:
    quarter_start: datetime
    saldo_mw: float
    publish_time: datetime

    def __post_init__(self):
        lag = self.publish_time - self.quarter_start
        if to_epoch(self.quarter_start) % (15 * MINUTE):
            raise DataError(f"imbalance quarter {self.quarter_start} not aligned")
        if not timedelta(minutes=15) <= lag <= timedelta(minutes=45):
            raise DataError(f"imbalance for {self.quarter_start} published after {lag}")


# --------------------------------------------------------------------------
# Forecast periods and neighbourhoods
# --------------------------------------------------------------------------

class PeriodId(str, enum.Enum):
    P3to2 = "P3to2"
    P2to1 = "P2to1"
    P1toHalf = "P1toHalf"

    @classmethod
    def parse(cls, value: "str | PeriodId") -> "PeriodId":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown period id {value!r}") from None


# lead time in minutes before delivery start, [first, last] inclusive
PERIOD_LEADS: dict[PeriodId, tuple[int, int]] = {
    PeriodId.P3to2: (180, 121),
    PeriodId.P2to1: (120, 61),
    PeriodId.P1toHalf: (60, 35),
}
WINDOW_FIRST_LEAD = 180
WINDOW_LAST_LEAD = 35

# hourly neighbours (offset in hours) traded alongside the current product
PERIOD_HOURLY_NEIGHBORS: dict[PeriodId, tuple[int, ...]] = {
    PeriodId.P3to2: (-2, -1, 1, 2),
    PeriodId.P2to1: (-1, 1, 2),
    PeriodId.P1toHalf: (1, 2),
}


def period_of(forecast_time: datetime, current: Product) -> PeriodId:
    """Half-open lead-time partition; a boundary minute belongs to the later period."""
    lead_s = current.start_s - to_epoch(forecast_time)
    if not WINDOW_LAST_LEAD * MINUTE <= lead_s <= WINDOW_FIRST_LEAD * MINUTE:
        raise ValueError(
            f"{forecast_time} lies outside the forecasting window of {current}"
        )
    if lead_s > 120 * MINUTE:
        return PeriodId.P3to2
    if lead_s > 60 * MINUTE:
        return PeriodId.P2to1
    return PeriodId.P1toHalf


def neighbors_for_period(current: Product, period: "PeriodId | str") -> list[Product]:
    """Hourly neighbours of the period plus the quarters of every included hour.

    Hourly neighbours come first (by offset), followed by quarter-hourly
    products grouped per hour in chronological order.
    """
    period = PeriodId.parse(period)
    if not current.is_hourly:
        raise ValueError("neighbourhoods are defined for hourly products only")
    offsets = PERIOD_HOURLY_NEIGHBORS[period]
    hourly = [current.shifted(k) for k in offsets]
    hours = sorted([current, *hourly])
    quarters = [q for h in hours for q in h.quarters()]
    return hourly + quarters


def forecast_offsets(period: "PeriodId | None" = None,
                     first_lead: int = WINDOW_FIRST_LEAD,
                     last_lead: int = WINDOW_LAST_LEAD) -> np.ndarray:
    """Lead times (minutes, descending) of the forecast grid, optionally per period."""
    leads = np.arange(first_lead, last_lead - 1, -1)
    if period is None:
        return leads
    hi, lo = PERIOD_LEADS[PeriodId.parse(period)]
    return leads[(leads <= hi) & (leads >= lo)]


# --------------------------------------------------------------------------
# Columnar stores
# --------------------------------------------------------------------------

def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TradeTape:
    """All trades of one product sorted by execution time (stable on ingestion order)."""

    times: np.ndarray    # int64 epoch seconds
    volumes: np.ndarray
    prices: np.ndarray
    areas: np.ndarray    # str

    def __post_init__(self):
        order = np.argsort(np.asarray(self.times, dtype=np.int64), kind="stable")
        object.__setattr__(self, "times", _frozen(np.asarray(self.times)[order], np.int64))
        object.__setattr__(self, "volumes", _frozen(np.asarray(self.volumes)[order], float))
        object.__setattr__(self, "prices", _frozen(np.asarray(self.prices)[order], float))
        object.__setattr__(self, "areas", _frozen(np.asarray(self.areas)[order], object))
        if np.any(self.volumes <= 0):
            raise DataError("trade volumes must be positive")

    def __len__(self) -> int:
        return len(self.times)

    def count_asof(self, t_s) -> np.ndarray:
        """Number of trades with exec_time <= t (vectorised)."""
        return np.searchsorted(self.times, t_s, side="right")


@dataclass(frozen=True, eq=False)
class LobBook:
    """Snapshots of one product; ladders padded with NaN to a common depth."""

    times: np.ndarray
    bid_px: np.ndarray
    bid_vol: np.ndarray
    ask_px: np.ndarray
    ask_vol: np.ndarray

    def __post_init__(self):
        order = np.argsort(np.asarray(self.times, dtype=np.int64), kind="stable")
        for name in ("bid_px", "bid_vol", "ask_px", "ask_vol"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise DataError(f"{name} must be 2-D (snapshots x levels)")
            object.__setattr__(self, name, _frozen(arr[order], float))
        object.__setattr__(self, "times", _frozen(np.asarray(self.times)[order], np.int64))
        _validate_ladder_block(self.bid_px, self.bid_vol, self.ask_px, self.ask_vol)

    def _level_arrays(self, i: int):
        bm, am = ~np.isnan(self.bid_px[i]), ~np.isnan(self.ask_px[i])
        return self.bid_px[i][bm], self.bid_vol[i][bm], self.ask_px[i][am], self.ask_vol[i][am]

    def snapshot(self, i: int, product: Product) -> LobSnapshot:
        bp, bv, ap, av = self._level_arrays(i)
        return LobSnapshot(product, from_epoch(self.times[i]),
                           tuple(zip(bp, bv)), tuple(zip(ap, av)))

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[LobSnapshot]) -> "LobBook":
        depth = max([max(len(s.bids), len(s.asks)) for s in snapshots] + [1])
        n = len(snapshots)
        arrs = {k: np.full((n, depth), np.nan) for k in ("bp", "bv", "ap", "av")}
        for i, s in enumerate(snapshots):
            for j, (p, v) in enumerate(s.bids):
                arrs["bp"][i, j], arrs["bv"][i, j] = p, v
            for j, (p, v) in enumerate(s.asks):
                arrs["ap"][i, j], arrs["av"][i, j] = p, v
        times = [to_epoch(s.time) for s in snapshots]
        return cls(np.array(times, dtype=np.int64), arrs["bp"], arrs["bv"], arrs["ap"], arrs["av"])


@dataclass(frozen=True, eq=False)
class ImbalanceSeries:
    quarter_starts: np.ndarray
    saldo_mw: np.ndarray
    publish_times: np.ndarray

    def __post_init__(self):
        qs = np.asarray(self.quarter_starts, dtype=np.int64)
        order = np.argsort(qs, kind="stable")
        object.__setattr__(self, "quarter_starts", _frozen(qs[order], np.int64))
        object.__setattr__(self, "saldo_mw", _frozen(np.asarray(self.saldo_mw)[order], float))
        object.__setattr__(self, "publish_times",
                           _frozen(np.asarray(self.publish_times)[order], np.int64))
        lag = self.publish_times - self.quarter_starts
        if np.any(self.quarter_starts % (15 * MINUTE)):
            raise DataError("imbalance quarters must be 15-minute aligned")
        if np.any(lag < 15 * MINUTE) or np.any(lag > 45 * MINUTE):
            raise DataError("imbalance publication delay outside [15, 45] minutes")
        if len(np.unique(self.quarter_starts)) != len(self.quarter_starts):
            raise DataError("duplicate imbalance quarter")

    @classmethod
    def empty(cls) -> "ImbalanceSeries":
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.quarter_starts)


@dataclass(frozen=True, eq=False)
class MarketDataset:
    """Immutable bundle of trades, books, fundamentals and imbalance readings.

    Feature code reads through the ``*_asof`` helpers, which never return
    records stamped after the query time.
    """

    trades: Mapping[Product, TradeTape]
    lobs: Mapping[Product, LobBook] = field(default_factory=dict)
    fundamentals: Mapping[tuple[int, Horizon], FundamentalRecord] = field(default_factory=dict)
    imbalances: ImbalanceSeries = field(default_factory=ImbalanceSeries.empty)
    time_range: tuple[datetime, datetime] | None = None

    def __post_init__(self):
        object.__setattr__(self, "trades", dict(sorted(self.trades.items())))
        object.__setattr__(self, "lobs", dict(sorted(self.lobs.items())))
        for product, tape in self.trades.items():
            if len(tape) and tape.times[-1] >= product.start_s:
                raise DataError(f"{product} has trades at or after delivery start")
        if self.time_range is None:
            starts = [p.delivery_start for p in self.trades]
            rng = (min(starts), max(starts) + HOUR) if starts else None
            object.__setattr__(self, "time_range", rng)

    # as-of API ------------------------------------------------------------
    def trades_asof(self, product: Product, t: datetime) -> list[Trade]:
        tape = self.trades.get(product)
        if tape is None:
            return []
        n = int(tape.count_asof(to_epoch(t)))
        return [Trade(product, from_epoch(tape.times[i]), float(tape.volumes[i]),
                      float(tape.prices[i]), str(tape.areas[i])) for i in range(n)]

    def lob_asof(self, product: Product, t: datetime) -> LobSnapshot | None:
        book = self.lobs.get(product)
        if book is None:
            return None
        i = int(np.searchsorted(book.times, to_epoch(t), side="right")) - 1
        return None if i < 0 else book.snapshot(i, product)

    def imbalance_asof(self, t: datetime) -> ImbalanceRecord | None:
        im = self.imbalances
        ok = np.flatnonzero(im.publish_times <= to_epoch(t))
        if not len(ok):
            return None
        i = ok[-1]  # quarter_starts are sorted, so the last published is the latest quarter
        return ImbalanceRecord(from_epoch(im.quarter_starts[i]), float(im.saldo_mw[i]),
                               from_epoch(im.publish_times[i]))

    def fundamental(self, delivery_start: datetime, horizon: Horizon) -> FundamentalRecord | None:
        return self.fundamentals.get((to_epoch(delivery_start), Horizon(horizon)))

    # convenience ------------------------------------------------------------
    def hourly_products(self, start: datetime | None = None,
                        end: datetime | None = None) -> list[Product]:
        lo = to_epoch(start) if start else -np.inf
        hi = to_epoch(end) if end else np.inf
        return [p for p in self.trades if p.is_hourly and lo <= p.start_s < hi]


def build_dataset(trades: Iterable[Trade] = (), snapshots: Iterable[LobSnapshot] = (),
                  fundamentals: Iterable[FundamentalRecord] = (),
                  imbalances: Iterable[ImbalanceRecord] = (),
                  time_range: tuple[datetime, datetime] | None = None) -> MarketDataset:
    """Assemble a dataset from record objects; list order is ingestion order."""
    by_product: dict[Product, list[Trade]] = {}
    for tr in trades:
        by_product.setdefault(tr.product, []).append(tr)
    tapes = {
        p: TradeTape(np.array([to_epoch(t.exec_time) for t in ts], dtype=np.int64),
                     np.array([t.volume for t in ts]), np.array([t.price for t in ts]),
                     np.array([t.area for t in ts], dtype=object))
        for p, ts in by_product.items()
    }
    books: dict[Product, list[LobSnapshot]] = {}
    for s in snapshots:
        books.setdefault(s.product, []).append(s)
    lobs = {p: LobBook.from_snapshots(ss) for p, ss in books.items()}
    fund: dict[tuple[int, Horizon], FundamentalRecord] = {}
    for rec in fundamentals:
        key = (to_epoch(rec.delivery_start), rec.horizon)
        if key in fund:
            raise DataError(f"duplicate fundamentals for {rec.delivery_start} {rec.horizon.value}")
        fund[key] = rec
    ims = list(imbalances)
    imb = ImbalanceSeries(
        np.array([to_epoch(r.quarter_start) for r in ims], dtype=np.int64),
        np.array([r.saldo_mw for r in ims], dtype=float),
        np.array([to_epoch(r.publish_time) for r in ims], dtype=np.int64),
    ) if ims else ImbalanceSeries.empty()
    return MarketDataset(tapes, lobs, fund, imb, time_range)

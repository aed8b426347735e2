from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cidforecast.market import (
    DataError, FundamentalRecord, Horizon, ImbalanceRecord, LobSnapshot, PeriodId, Product,
    Trade, build_dataset, forecast_offsets, neighbors_for_period, period_of, utc,
)

S = Product.hourly(utc(2024, 6, 1, 10))


def test_product_alignment():
    Product.quarter(utc(2024, 6, 1, 10, 45))
    with pytest.raises(DataError):
        Product.hourly(utc(2024, 6, 1, 10, 15))
    with pytest.raises(DataError):
        Product.quarter(utc(2024, 6, 1, 10, 5))
    with pytest.raises(DataError):
        Product(utc(2024, 6, 1, 10), timedelta(minutes=30))


def test_trade_invariants():
    with pytest.raises(DataError):
        Trade(S, S.delivery_start, 1.0, 50.0)
    with pytest.raises(DataError):
        Trade(S, S.delivery_start - timedelta(minutes=1), 0.0, 50.0)


def test_neighbors_p1tohalf_example():
    got = neighbors_for_period(S, "P1toHalf")
    hourly = [p for p in got if p.is_hourly]
    assert [p.delivery_start.hour for p in hourly] == [11, 12]
    qh = [(p.delivery_start.hour, p.delivery_start.minute) for p in got if not p.is_hourly]
    assert qh[:4] == [(10, 0), (10, 15), (10, 30), (10, 45)]
    assert len(qh) == 12 and {h for h, _ in qh} == {10, 11, 12}


def test_neighbors_p3to2_counts():
    got = neighbors_for_period(S, PeriodId.P3to2)
    assert sum(p.is_hourly for p in got) == 4
    assert sum(not p.is_hourly for p in got) == 20


def test_neighbors_p2to1():
    got = neighbors_for_period(S, "P2to1")
    assert [p.delivery_start.hour for p in got if p.is_hourly] == [9, 11, 12]


def test_neighbors_unknown_period():
    with pytest.raises(ValueError):
        neighbors_for_period(S, "P4to3")


def test_neighbor_shrinkage():
    hourly = {p: {q for q in neighbors_for_period(S, p) if q.is_hourly} for p in PeriodId}
    assert hourly[PeriodId.P1toHalf] <= hourly[PeriodId.P2to1] <= hourly[PeriodId.P3to2]


@pytest.mark.parametrize("lead,expected", [(180, "P3to2"), (121, "P3to2"), (120, "P2to1"),
                                           (61, "P2to1"), (60, "P1toHalf"), (35, "P1toHalf")])
def test_period_boundaries(lead, expected):
    assert period_of(S.delivery_start - timedelta(minutes=lead), S).value == expected


@pytest.mark.parametrize("lead", [181, 34, 0])
def test_period_outside_window(lead):
    with pytest.raises(ValueError):
        period_of(S.delivery_start - timedelta(minutes=lead), S)


@given(st.integers(35 * 60, 180 * 60))
def test_period_partition(lead_s):
    t = S.delivery_start - timedelta(seconds=lead_s)
    p = period_of(t, S)
    # half-open bands in seconds: (120, 180], (60, 120], [35, 60]
    band = (PeriodId.P3to2 if lead_s > 7200 else PeriodId.P2to1 if lead_s > 3600
            else PeriodId.P1toHalf)
    assert p is band


def test_grid_sizes():
    assert len(forecast_offsets()) == 146
    assert [len(forecast_offsets(p)) for p in PeriodId] == [60, 60, 26]
    assert np.concatenate([forecast_offsets(p) for p in PeriodId]).tolist() == \
        forecast_offsets().tolist()


def test_lob_validation():
    LobSnapshot(S, utc(2024, 6, 1, 9), bids=((49, 1), (48, 2)), asks=((51, 1), (52, 1)))
    with pytest.raises(DataError):
        LobSnapshot(S, utc(2024, 6, 1, 9), bids=((49, 1),), asks=((48, 1),))
    with pytest.raises(DataError):
        LobSnapshot(S, utc(2024, 6, 1, 9), bids=((48, 1), (49, 1)))
    with pytest.raises(DataError):
        LobSnapshot(S, utc(2024, 6, 1, 9), asks=((52, 1), (51, 1)))
    with pytest.raises(DataError):
        LobSnapshot(S, utc(2024, 6, 1, 9), asks=((52, 0),))


def test_imbalance_and_fundamental_validation():
    ImbalanceRecord(utc(2024, 6, 1, 15, 45), -10.0, utc(2024, 6, 1, 16, 15))
    with pytest.raises(DataError):
        ImbalanceRecord(utc(2024, 6, 1, 15, 45), 1.0, utc(2024, 6, 1, 15, 55))
    with pytest.raises(DataError):
        ImbalanceRecord(utc(2024, 6, 1, 15, 45), 1.0, utc(2024, 6, 1, 16, 31))
    with pytest.raises(DataError):
        FundamentalRecord(S.delivery_start, Horizon.DAY_AHEAD, None, 1.0, 1.0, 1.0)
    with pytest.raises(DataError):
        FundamentalRecord(S.delivery_start, Horizon.INTRADAY, None, -1.0, 1.0, 1.0)


def test_asof_api_never_returns_future_records():
    t0 = S.delivery_start - timedelta(hours=2)
    trades = [Trade(S, t0 + timedelta(seconds=k * 37), 1.0, 50.0 + k) for k in range(190)]
    snaps = [LobSnapshot(S, t0 + timedelta(minutes=k), bids=((40.0, 1.0),), asks=((60.0, 1.0),))
             for k in range(60)]
    ims = [ImbalanceRecord(t0 + timedelta(minutes=15 * k), float(k),
                           t0 + timedelta(minutes=15 * k + 15 + 7 * (k % 3))) for k in range(6)]
    ds = build_dataset(trades, snaps, imbalances=ims)
    for m in range(0, 100, 7):
        t = t0 + timedelta(minutes=m, seconds=13)
        assert all(tr.exec_time <= t for tr in ds.trades_asof(S, t))
        snap = ds.lob_asof(S, t)
        assert snap is None or snap.time <= t
        rec = ds.imbalance_asof(t)
        assert rec is None or rec.publish_time <= t


def test_trades_at_delivery_rejected_in_dataset():
    from cidforecast.market import MarketDataset, TradeTape
    tape = TradeTape(np.array([S.start_s]), np.array([1.0]), np.array([1.0]), np.array(["DE"], object))
    with pytest.raises(DataError):
        MarketDataset({S: tape})


def test_tape_ties_keep_ingestion_order():
    t = S.delivery_start - timedelta(minutes=5)
    ds = build_dataset([Trade(S, t, 1.0, 10.0), Trade(S, t, 1.0, 20.0),
                        Trade(S, t - timedelta(seconds=1), 1.0, 5.0)])
    assert ds.trades[S].prices.tolist() == [5.0, 10.0, 20.0]

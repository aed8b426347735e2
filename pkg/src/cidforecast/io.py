"""CSV interchange: market data, sample matrices and prediction tables.

Timestamps are written as RFC 3339 UTC strings (``2024-04-01T10:00:00Z``).
Floats are written in shortest round-trip form, so reading a file back
reproduces the in-memory values exactly.
"""
from __future__ import annotations

import json
from collections import Counter
from pathlib import Path

import numpy as np
import pandas as pd

from .features import (FeatureConfig, FeatureSetId, SampleSet, feature_layout)
from .market import (HOUR, QUARTER, DataError, FundamentalRecord, Horizon, ImbalanceSeries,
                     LobBook, MarketDataset, PeriodId, Product, TradeTape, from_epoch)

TRADES_COLUMNS = ["delivery_start", "length_min", "exec_time", "volume_mw", "price_eur_mwh", "area"]
LOB_COLUMNS = ["delivery_start", "length_min", "snapshot_time", "side", "level",
               "price_eur_mwh", "volume_mw"]
FUNDAMENTALS_COLUMNS = ["delivery_start", "horizon", "load_mw", "solar_mw", "wind_onshore_mw",
                        "wind_offshore_mw"]
IMBALANCE_COLUMNS = ["quarter_start", "saldo_mw", "publish_time"]
SAMPLE_META = ["product_start", "forecast_time", "period", "reference_price", "future_price",
               "label", "norm_vwap", "norm_vwsd"]
SKIP_COLUMNS = ["product_start", "forecast_time", "reason", "labeled"]


class SchemaError(DataError):
    """A CSV file violates its schema; ``file`` and ``line`` locate the problem."""

    def __init__(self, message: str, file, line: int | None = None):
        super().__init__(f"{file}:{line}: {message}" if line else f"{file}: {message}")
        self.file = str(file)
        self.line = line
        self.bare = message


def format_times(seconds) -> np.ndarray:
    s = np.asarray(seconds, dtype=np.int64).astype("datetime64[s]")
    return np.char.add(np.datetime_as_string(s, unit="s"), "Z")


def _parse_times(col: pd.Series, path, name: str) -> np.ndarray:
    # book and trade files repeat timestamps heavily: parse each distinct string once
    codes, uniq = pd.factorize(col.astype(str).to_numpy())
    uniq = np.asarray(uniq, dtype=str)
    ok = ((np.char.str_len(uniq) == 20) & np.char.endswith(uniq, "Z")
          & (np.char.find(uniq, "T") == 10))
    if ok.all():
        try:
            return np.char.rstrip(uniq, "Z").astype("datetime64[s]").astype(np.int64)[codes]
        except ValueError:
            pass
    # uniques come in order of first appearance, so the first failure is the earliest row
    for j, v in enumerate(uniq):
        try:
            good = bool(ok[j]) and not np.isnat(np.datetime64(v[:-1], "s"))
        except ValueError:
            good = False
        if not good:
            i = int(np.argmax(codes == j))
            raise SchemaError(f"column '{name}': bad RFC 3339 timestamp {str(v)!r}", path, i + 2)
    raise AssertionError("unreachable")


def _parse_float(col: pd.Series, path, name: str, allow_empty: bool = False) -> np.ndarray:
    # numpy's str->float conversion is correctly rounded; pd.to_numeric is not
    vals = col.fillna("").astype(str).to_numpy()
    empty = vals == ""
    if empty.any() and not allow_empty:
        raise SchemaError(f"column '{name}': missing value", path, int(np.argmax(empty)) + 2)
    try:
        return np.where(empty, "nan", vals).astype(float)
    except ValueError:
        for i, v in enumerate(vals):
            try:
                float(v or "nan")
            except ValueError:
                raise SchemaError(f"column '{name}': not a number: {v!r}", path, i + 2) from None
        raise


def _read(path, columns) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with path.open() as fh:
        header = fh.readline().rstrip("\r\n").split(",")
    if header != columns:
        raise SchemaError(f"header must be {','.join(columns)}", path, 1)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    except pd.errors.ParserError as exc:
        raise SchemaError(f"malformed CSV: {exc}", path) from None
    return df


def _check(cond: np.ndarray, path, msg: str):
    if cond.any():
        raise SchemaError(msg, path, int(np.argmax(cond)) + 2)


def _product(start_s: int, length_min: int) -> Product:
    return Product(from_epoch(start_s), HOUR if length_min == 60 else QUARTER)


def write_csv(df: pd.DataFrame, path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


# --------------------------------------------------------------------------
# Market data
# --------------------------------------------------------------------------

def write_market(ds: MarketDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = []
    for p, tape in ds.trades.items():
        parts.append((p.start_s, p.length_min, tape))
    n = sum(len(t) for *_, t in parts)
    ds_col = np.empty(n, np.int64)
    ln = np.empty(n, np.int64)
    pos = 0
    for s, l, t in parts:
        ds_col[pos:pos + len(t)] = s
        ln[pos:pos + len(t)] = l
        pos += len(t)
    cat = (lambda attr, dt: np.concatenate([getattr(t, attr) for *_, t in parts])
           if parts else np.zeros(0, dt))
    write_csv(pd.DataFrame({
        "delivery_start": format_times(ds_col), "length_min": ln,
        "exec_time": format_times(cat("times", np.int64)),
        "volume_mw": cat("volumes", float), "price_eur_mwh": cat("prices", float),
        "area": cat("areas", object),
    }, columns=TRADES_COLUMNS), out / "trades.csv")

    frames = []
    for p, book in ds.lobs.items():
        for side, px, vol in (("bid", book.bid_px, book.bid_vol), ("ask", book.ask_px, book.ask_vol)):
            i, j = np.nonzero(~np.isnan(px))
            frames.append(pd.DataFrame({
                "delivery_start": p.start_s, "length_min": p.length_min,
                "snapshot_time": book.times[i], "side": side, "level": j + 1,
                "price_eur_mwh": px[i, j], "volume_mw": vol[i, j]}))
    lob = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=LOB_COLUMNS)
    if len(lob):
        lob["_side"] = (lob["side"] == "ask").astype(int)
        lob = lob.sort_values(["delivery_start", "length_min", "snapshot_time", "_side", "level"],
                              kind="stable").drop(columns="_side")
        lob["delivery_start"] = format_times(lob["delivery_start"])
        lob["snapshot_time"] = format_times(lob["snapshot_time"])
    write_csv(lob[LOB_COLUMNS], out / "lob.csv")

    rows = []
    for (start, hz), rec in sorted(ds.fundamentals.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        rows.append({"delivery_start": format_times([start])[0], "horizon": hz.value,
                     "load_mw": rec.load_mw if rec.load_mw is not None else np.nan,
                     "solar_mw": rec.solar_mw, "wind_onshore_mw": rec.wind_onshore_mw,
                     "wind_offshore_mw": rec.wind_offshore_mw})
    write_csv(pd.DataFrame(rows, columns=FUNDAMENTALS_COLUMNS), out / "fundamentals.csv")

    im = ds.imbalances
    write_csv(pd.DataFrame({"quarter_start": format_times(im.quarter_starts),
                            "saldo_mw": im.saldo_mw,
                            "publish_time": format_times(im.publish_times)},
                           columns=IMBALANCE_COLUMNS), out / "imbalance.csv")


def read_market(data_dir, time_range=None) -> MarketDataset:
    """Load the four market CSVs. ``lob``, ``fundamentals`` and ``imbalance`` are optional."""
    d = Path(data_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory not found: {d}")
    path = d / "trades.csv"
    df = _read(path, TRADES_COLUMNS)
    start = _parse_times(df["delivery_start"], path, "delivery_start")
    length = _parse_float(df["length_min"], path, "length_min")
    _check(~np.isin(length, (15, 60)), path, "length_min must be 15 or 60")
    ex = _parse_times(df["exec_time"], path, "exec_time")
    vol = _parse_float(df["volume_mw"], path, "volume_mw")
    px = _parse_float(df["price_eur_mwh"], path, "price_eur_mwh")
    _check(vol <= 0, path, "volume_mw must be positive")
    _check(ex >= start, path, "trade executed at or after delivery start")
    _check(start % 900 != 0, path, "delivery_start not quarter-hour aligned")
    _check((length == 60) & (start % 3600 != 0), path, "hourly delivery_start not hour aligned")
    areas = df["area"].fillna("").to_numpy(object)
    _check(areas == "", path, "area must not be empty")
    tapes = {}
    key = start * 100 + length.astype(np.int64)
    order = np.argsort(key, kind="stable")
    uk, first = np.unique(key[order], return_index=True)
    bounds = np.r_[first, len(order)]
    for k in range(len(uk)):
        idx = order[bounds[k]:bounds[k + 1]]
        tapes[_product(int(start[idx[0]]), int(length[idx[0]]))] = TradeTape(
            ex[idx], vol[idx], px[idx], areas[idx])

    lobs = {}
    path = d / "lob.csv"
    if path.exists():
        df = _read(path, LOB_COLUMNS)
        if len(df):
            ls = _parse_times(df["delivery_start"], path, "delivery_start")
            ll = _parse_float(df["length_min"], path, "length_min").astype(np.int64)
            st = _parse_times(df["snapshot_time"], path, "snapshot_time")
            side = df["side"].to_numpy(object)
            _check(~np.isin(side, ["bid", "ask"]), path, "side must be 'bid' or 'ask'")
            lev = _parse_float(df["level"], path, "level")
            _check((lev < 1) | (lev != np.round(lev)), path, "level must be a positive integer")
            lev = lev.astype(np.int64)
            lp = _parse_float(df["price_eur_mwh"], path, "price_eur_mwh")
            lv = _parse_float(df["volume_mw"], path, "volume_mw")
            _check(lv <= 0, path, "volume_mw must be positive")
            depth = int(lev.max())
            pkey = ls * 100 + ll
            for k in np.unique(pkey):
                rows = np.flatnonzero(pkey == k)
                times, ti = np.unique(st[rows], return_inverse=True)
                arrs = {s: (np.full((len(times), depth), np.nan), np.full((len(times), depth), np.nan))
                        for s in ("bid", "ask")}
                for s in ("bid", "ask"):
                    m = side[rows] == s
                    r = rows[m]
                    pxa, va = arrs[s]
                    slot = (ti[m], lev[r] - 1)
                    if len(set(zip(*slot))) != len(r):
                        raise SchemaError("duplicate (snapshot, side, level) row", path,
                                          int(r[0]) + 2)
                    pxa[slot] = lp[r]
                    va[slot] = lv[r]
                product = _product(int(ls[rows[0]]), int(ll[rows[0]]))
                try:
                    lobs[product] = LobBook(times, arrs["bid"][0], arrs["bid"][1],
                                            arrs["ask"][0], arrs["ask"][1])
                except DataError as exc:
                    raise SchemaError(f"{product}: {exc}", path, int(rows[0]) + 2) from None

    fund = {}
    path = d / "fundamentals.csv"
    if path.exists():
        df = _read(path, FUNDAMENTALS_COLUMNS)
        fs = _parse_times(df["delivery_start"], path, "delivery_start")
        hz = df["horizon"].to_numpy(object)
        _check(~np.isin(hz, [h.value for h in Horizon]), path, "horizon must be day_ahead or intraday")
        load = _parse_float(df["load_mw"], path, "load_mw", allow_empty=True)
        cols = [_parse_float(df[c], path, c) for c in FUNDAMENTALS_COLUMNS[3:]]
        for i in range(len(df)):
            try:
                rec = FundamentalRecord(from_epoch(fs[i]), Horizon(hz[i]),
                                        None if np.isnan(load[i]) else float(load[i]),
                                        float(cols[0][i]), float(cols[1][i]), float(cols[2][i]))
            except DataError as exc:
                raise SchemaError(str(exc), path, i + 2) from None
            k = (int(fs[i]), rec.horizon)
            if k in fund:
                raise SchemaError("duplicate (delivery_start, horizon)", path, i + 2)
            fund[k] = rec

    imb = ImbalanceSeries.empty()
    path = d / "imbalance.csv"
    if path.exists():
        df = _read(path, IMBALANCE_COLUMNS)
        qs = _parse_times(df["quarter_start"], path, "quarter_start")
        sal = _parse_float(df["saldo_mw"], path, "saldo_mw")
        pub = _parse_times(df["publish_time"], path, "publish_time")
        lag = pub - qs
        _check((lag < 900) | (lag > 2700), path, "publish_time must be 15 to 45 minutes after quarter_start")
        _check(qs % 900 != 0, path, "quarter_start not 15-minute aligned")
        imb = ImbalanceSeries(qs, sal, pub)
    if time_range is None:
        man = d / "manifest.json"
        if man.exists():
            tr = json.loads(man.read_text()).get("time_range")
            if tr:
                time_range = tuple(pd.Timestamp(x).to_pydatetime() for x in tr)
    return MarketDataset(tapes, lobs, fund, imb, time_range)


# --------------------------------------------------------------------------
# Samples
# --------------------------------------------------------------------------

def samples_filename(period, feature_set) -> str:
    return f"samples_{PeriodId.parse(period).value}_{FeatureSetId.parse(feature_set).value}.csv"


def skips_filename(period, feature_set) -> str:
    return f"skips_{PeriodId.parse(period).value}_{FeatureSetId.parse(feature_set).value}.csv"


def write_samples(s: SampleSet, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lab = s.labels
    meta = pd.DataFrame({
        "product_start": format_times(s.product_start),
        "forecast_time": format_times(s.forecast_time),
        "period": s.period.value,
        "reference_price": s.reference,
        "future_price": s.future,
        "label": np.where(lab == 1, "up", np.where(lab == 0, "down", "")),
        "norm_vwap": s.norm_vwap,
        "norm_vwsd": s.norm_vwsd,
    })
    feats = pd.DataFrame(s.X, columns=[d.name for d in s.layout])
    p1 = out / samples_filename(s.period, s.feature_set)
    write_csv(pd.concat([meta, feats], axis=1), p1)
    sk = s.skipped
    p2 = out / skips_filename(s.period, s.feature_set)
    write_csv(pd.DataFrame({
        "product_start": format_times(sk["product_start"]),
        "forecast_time": format_times(sk["forecast_time"]),
        "reason": sk["reason"].astype(str) if len(sk["reason"]) else np.zeros(0, str),
        "labeled": np.asarray(sk["labeled"], bool).astype(int),
    }, columns=SKIP_COLUMNS), p2)
    return p1, p2


def read_samples(data_dir, period, feature_set, config: FeatureConfig = FeatureConfig()) -> SampleSet:
    period, fs = PeriodId.parse(period), FeatureSetId.parse(feature_set)
    layout = feature_layout(fs, period, config)
    path = Path(data_dir) / samples_filename(period, fs)
    df = _read(path, SAMPLE_META + [d.name for d in layout])
    ps = _parse_times(df["product_start"], path, "product_start")
    ft = _parse_times(df["forecast_time"], path, "forecast_time")
    _check(df["period"].to_numpy(object) != period.value, path, f"period must be {period.value}")
    ref = _parse_float(df["reference_price"], path, "reference_price")
    fut = _parse_float(df["future_price"], path, "future_price", allow_empty=True)
    label = df["label"].fillna("").to_numpy(object)
    expect = np.where(np.isnan(fut), "", np.where(fut > ref, "up", "down"))
    _check(label != expect, path, "label inconsistent with reference/future prices")
    mu = _parse_float(df["norm_vwap"], path, "norm_vwap")
    sd = _parse_float(df["norm_vwsd"], path, "norm_vwsd")
    X = np.column_stack([_parse_float(df[d.name], path, d.name) for d in layout]) \
        if len(layout) else np.zeros((len(df), 0))
    skipped = {"product_start": np.zeros(0, np.int64), "forecast_time": np.zeros(0, np.int64),
               "reason": np.zeros(0, object), "labeled": np.zeros(0, bool)}
    spath = Path(data_dir) / skips_filename(period, fs)
    if spath.exists():
        sk = _read(spath, SKIP_COLUMNS)
        if len(sk):
            skipped = {"product_start": _parse_times(sk["product_start"], spath, "product_start"),
                       "forecast_time": _parse_times(sk["forecast_time"], spath, "forecast_time"),
                       "reason": sk["reason"].to_numpy(object),
                       "labeled": _parse_float(sk["labeled"], spath, "labeled").astype(bool)}
    return SampleSet(period, fs, layout, ps, ft, X, ref, fut, mu, sd, skipped, Counter())


# --------------------------------------------------------------------------
# Predictions
# --------------------------------------------------------------------------

def write_predictions(preds: pd.DataFrame, path) -> None:
    out = preds.copy()
    out["product_start"] = format_times(out["product_start"].to_numpy(np.int64))
    out["forecast_time"] = format_times(out["forecast_time"].to_numpy(np.int64))
    write_csv(out, path)


def read_predictions(path) -> pd.DataFrame:
    from .evaluation import PREDICTION_COLUMNS
    df = _read(path, PREDICTION_COLUMNS)
    out = pd.DataFrame({
        "fold": _parse_float(df["fold"], path, "fold").astype(np.int64),
        "period": df["period"].astype(str),
        "feature_set": df["feature_set"].astype(str),
        "model": df["model"].astype(str),
        "product_start": _parse_times(df["product_start"], path, "product_start"),
        "forecast_time": _parse_times(df["forecast_time"], path, "forecast_time"),
        "label": df["label"].astype(str),
        "direction": df["direction"].astype(str),
    })
    for c in ("label", "direction"):
        _check(~out[c].isin(["up", "down"]).to_numpy(), path, f"{c} must be 'up' or 'down'")
    for c in ("signal_strength", "reference_price", "future_price", "pnl"):
        out[c] = _parse_float(df[c], path, c)
    return out

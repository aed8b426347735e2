"""Accuracy, PnL, signal-strength curves and weekly series over prediction tables.

Prediction tables are pandas frames with the ``predictions.csv`` columns;
``direction`` and ``label`` hold the strings ``"up"``/``"down"``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

GROUP_KEYS = ["period", "feature_set", "model"]
PREDICTION_COLUMNS = ["fold", "period", "feature_set", "model", "product_start", "forecast_time",
                      "label", "direction", "signal_strength", "reference_price",
                      "future_price", "pnl"]


def pnl_of(direction, reference, future):
    """Per-MWh profit of a unit position opened at ``reference`` and closed at ``future``.

    Works on scalars or arrays; ``direction`` is "up"/"down" or 1/0.
    """
    d = np.asarray(direction)
    up = d.astype(str) == "up" if d.dtype.kind in "USO" else d.astype(bool)
    sign = np.where(up, 1.0, -1.0)
    out = sign * (np.asarray(future, float) - np.asarray(reference, float))
    return float(out) if out.ndim == 0 else out


def correct(df: pd.DataFrame) -> np.ndarray:
    return (df["direction"].to_numpy() == df["label"].to_numpy())


def _summary(df: pd.DataFrame) -> dict:
    return {"accuracy": float(correct(df).mean()), "mean_pnl": float(df["pnl"].mean()),
            "n_samples": int(len(df))}


def overall_metrics(preds: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for key, g in preds.groupby(GROUP_KEYS, sort=True):
        fut = g["future_price"].to_numpy()
        ref = g["reference_price"].to_numpy()
        rows.append({**dict(zip(GROUP_KEYS, key)), **_summary(g),
                     "total_pnl": float(g["pnl"].sum()),
                     "perfect_foresight_pnl": float(np.abs(fut - ref).mean())})
    return pd.DataFrame(rows, columns=GROUP_KEYS + ["accuracy", "mean_pnl", "n_samples",
                                                    "total_pnl", "perfect_foresight_pnl"])


def strength_order(df: pd.DataFrame) -> np.ndarray:
    """Row order by decreasing strength; ties by product start then forecast time."""
    return np.lexsort((df["forecast_time"].to_numpy(), df["product_start"].to_numpy(),
                       -df["signal_strength"].to_numpy()))


def top_share_size(n: int, percent: int) -> int:
    return -(-percent * n // 100)


def percentile_curves(preds: pd.DataFrame, shares=range(1, 101)) -> pd.DataFrame:
    """Metrics over the ceil(share * n) most confident predictions of each group."""
    if not len(preds):
        raise ValueError("no predictions")
    rows = []
    for key, g in preds.groupby(GROUP_KEYS, sort=True):
        order = strength_order(g)
        ok = correct(g)[order].astype(float)
        pnl = g["pnl"].to_numpy()[order]
        c_ok, c_pnl = np.cumsum(ok), np.cumsum(pnl)
        for pct in shares:
            k = top_share_size(len(g), pct)
            rows.append({**dict(zip(GROUP_KEYS, key)), "share_pct": int(pct),
                         "accuracy": c_ok[k - 1] / k, "mean_pnl": c_pnl[k - 1] / k,
                         "n_samples": k})
    return pd.DataFrame(rows)


def weekly_series(preds: pd.DataFrame, fold_weeks: dict | None = None) -> pd.DataFrame:
    """Accuracy per test week (one fold = one week) and group.

    ``fold_weeks`` maps fold index to the week's start date; without it the
    week start is the earliest forecast date seen in the fold.
    """
    rows = []
    for (fold, *key), g in preds.groupby(["fold"] + GROUP_KEYS, sort=True):
        if fold_weeks is not None and fold in fold_weeks:
            week = str(fold_weeks[fold])
        else:
            week = str(pd.Timestamp(int(g["forecast_time"].min()), unit="s").date())
        rows.append({"fold": int(fold), "week_start": week, **dict(zip(GROUP_KEYS, key)),
                     **_summary(g)})
    return pd.DataFrame(rows, columns=["fold", "week_start"] + GROUP_KEYS
                        + ["accuracy", "mean_pnl", "n_samples"])


def perfect_foresight_benchmark(preds: pd.DataFrame) -> dict[str, float]:
    """Mean |future - reference| per period over distinct forecast instances."""
    uniq = preds.drop_duplicates(["period", "product_start", "forecast_time"])
    diff = (uniq["future_price"] - uniq["reference_price"]).abs()
    return {str(k): float(v) for k, v in diff.groupby(uniq["period"], sort=True).mean().items()}


def figure_manifest(name: str, data_file: str, kind: str, x: str, y: str, series: list[str],
                    **extra) -> dict:
    return {"figure": name, "kind": kind, "data": data_file, "x": x, "y": y,
            "series_by": series, **extra}


def write_csv(df: pd.DataFrame, path) -> None:
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def write_report(preds: pd.DataFrame, out_dir, fold_weeks: dict | None = None,
                 manifest: dict | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    curves = percentile_curves(preds)
    files = {
        "metrics_overall.csv": overall_metrics(preds),
        "curves_accuracy.csv": curves[GROUP_KEYS + ["share_pct", "accuracy", "n_samples"]],
        "curves_pnl.csv": curves[GROUP_KEYS + ["share_pct", "mean_pnl", "n_samples"]],
        "weekly_accuracy.csv": weekly_series(preds, fold_weeks),
    }
    written = {}
    for name, df in files.items():
        write_csv(df, out / name)
        written[name] = out / name
    figures = {
        "accuracy_curves.json": figure_manifest("accuracy_by_strength_share", "curves_accuracy.csv",
                                                "line", "share_pct", "accuracy", GROUP_KEYS),
        "pnl_curves.json": figure_manifest("pnl_by_strength_share", "curves_pnl.csv", "line",
                                           "share_pct", "mean_pnl", GROUP_KEYS,
                                           perfect_foresight=perfect_foresight_benchmark(preds)),
        "weekly_accuracy.json": figure_manifest("weekly_accuracy", "weekly_accuracy.csv", "line",
                                                "week_start", "accuracy", GROUP_KEYS),
    }
    for name, body in figures.items():
        if manifest:
            body["provenance"] = manifest
        path = out / "figures" / name
        path.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
        written[f"figures/{name}"] = path
    return written

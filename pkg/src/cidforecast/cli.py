"""Command-line entry point: generate | featurize | train | backtest | dm-test | report."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtest import make_folds, run
from .config import ConfigError, RunConfig, canonical_json, load_config
from .evaluation import write_csv, write_report
from .features import FeatureEngine, FeatureSetId, assemble
from .io import (SchemaError, read_market, read_predictions, read_samples, samples_filename,
                 write_market, write_predictions, write_samples)
from .market import UTC, DataError, PeriodId
from .models import fit_model, save_model
from .stats import error_series, pairwise_matrix
from .synth import generate as generate_market

log = logging.getLogger("cidforecast")


class UsageError(ValueError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _threads(args, cfg: RunConfig) -> int:
    return max(1, args.threads if args.threads is not None else cfg.threads)


def _data_dir(args, cfg: RunConfig, attr: str = "data") -> Path:
    value = getattr(args, attr, None) or cfg.data_dir or os.environ.get("CID_DATA_DIR")
    if not value:
        raise UsageError(f"--{attr} not given and CID_DATA_DIR is unset")
    return Path(value)


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(out: Path, command: str, cfg: RunConfig, **extra) -> dict:
    body = {"tool": "cidforecast", "version": __version__, "command": command,
            "config_digest": cfg.digest(), "config": cfg.to_dict(), **extra}
    body["config"].pop("threads")
    body["config"].pop("data_dir")
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    return body


def _is_samples_dir(d: Path) -> bool:
    return any(d.glob("samples_*.csv")) and not (d / "trades.csv").exists()


def _load_samples(d: Path, cfg: RunConfig, threads: int = 1):
    """(period, fs) -> SampleSet, from a featurize output or raw market data."""
    fc = cfg.features.to_feature_config()
    keys = [(PeriodId.parse(p), FeatureSetId.parse(fs)) for p in cfg.periods
            for fs in cfg.feature_sets]
    if _is_samples_dir(d):
        return {k: read_samples(d, k[0], k[1], fc) for k in keys}, None
    ds = read_market(d)
    engine = FeatureEngine(ds, fc)
    return {k: assemble(ds, k[1], k[0], config=fc, engine=engine) for k in keys}, ds


def _folds(cfg: RunConfig, samples):
    fc = cfg.folds
    ft = np.concatenate([s.forecast_time for s in samples.values()] +
                        [s.skipped["forecast_time"] for s in samples.values()])
    if not len(ft):
        raise DataError("no forecast instances to evaluate")
    first = datetime.fromtimestamp(int(ft.min()), tz=UTC)
    last = datetime.fromtimestamp(int(ft.max()), tz=UTC)
    data_start = first.replace(hour=0, minute=0, second=0)
    span = timedelta(days=fc.test_days) * fc.n_folds
    if fc.test_start is not None:
        start = datetime(fc.test_start.year, fc.test_start.month, fc.test_start.day, tzinfo=UTC)
    else:
        end = (last + timedelta(days=1)).replace(hour=0, minute=0, second=0)
        start = end - span
    return make_folds((start, start + span), fc.n_folds, fc.train_days, fc.buffer_days,
                      fc.test_days, data_start=data_start, min_train_days=fc.min_train_days)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_generate(args):
    cfg = _config(args)
    out = _data_dir(args, cfg, "out")
    gen = cfg.generator
    if args.days is not None:
        gen = dataclasses.replace(gen, days=args.days)
        cfg = dataclasses.replace(cfg, generator=gen)
    ds = generate_market(gen)
    write_market(ds, out)
    _manifest(out, "generate", cfg, time_range=[t.isoformat() for t in ds.time_range],
              files={n: _file_digest(out / n) for n in
                     ("trades.csv", "lob.csv", "fundamentals.csv", "imbalance.csv")})
    return {"out": str(out), "products": len(ds.trades)}


def cmd_featurize(args):
    cfg = _config(args)
    data, out = _data_dir(args, cfg), Path(args.out)
    samples, _ = _load_samples(data, cfg)
    counts = {}
    for (p, fs), s in sorted(samples.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        write_samples(s, out)
        counts[samples_filename(p, fs)] = {"samples": len(s), "skips": dict(sorted(s.skip_counts.items())),
                                           "flags": dict(sorted(s.flags.items()))}
    _manifest(out, "featurize", cfg, outputs=counts)
    return {"out": str(out), "files": len(counts)}


def cmd_train(args):
    cfg = _config(args)
    data, out = _data_dir(args, cfg), Path(args.out)
    period, fs = PeriodId.parse(args.period), FeatureSetId.parse(args.feature_set)
    sub = dataclasses.replace(cfg, periods=(period.value,), feature_sets=(fs.value,))
    samples, _ = _load_samples(data, sub)
    s = samples[(period, fs)]
    mask = s.labeled.copy()
    if args.train_start:
        mask &= s.forecast_time >= int(datetime.fromisoformat(args.train_start).replace(tzinfo=UTC).timestamp())
    if args.train_end:
        mask &= s.forecast_time < int(datetime.fromisoformat(args.train_end).replace(tzinfo=UTC).timestamp())
    idx = np.flatnonzero(mask)
    idx = idx[np.lexsort((s.forecast_time[idx], s.product_start[idx]))]
    tr = s.subset(idx)
    names = [d.name for d in s.layout]
    written = []
    for spec in cfg.models:
        if args.model and spec.name != args.model:
            continue
        model = fit_model(spec.kind, tr.X, tr.labels.astype(float), target=tr.target_z,
                          price_mask=s.price_mask, layout=names, **dict(spec.params))
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"model_{period.value}_{fs.value}_{spec.name}.json"
        save_model(model, path)
        written.append(path.name)
    if not written:
        raise UsageError(f"no model named {args.model!r} in the configuration")
    _manifest(out, "train", cfg, period=period.value, feature_set=fs.value,
              n_train=int(len(idx)), models=written)
    return {"out": str(out), "models": written}


def cmd_backtest(args):
    cfg = _config(args)
    data, out = _data_dir(args, cfg), Path(args.out)
    samples, _ = _load_samples(data, cfg)
    folds = _folds(cfg, samples)
    if not folds:
        raise DataError("every fold lacks training history; extend the data or lower min_train_days")
    res = run(samples, folds, cfg.models, cfg.digest(), _threads(args, cfg))
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(res.predictions, out / "predictions.csv")
    write_csv(res.skip_table(), out / "skips.csv")
    write_csv(pd.DataFrame([{"fold": f.fold_index, "test_start": f.test_start.isoformat(),
                             "test_end": f.test_end.isoformat(),
                             "train_start": f.train_start.isoformat(),
                             "train_end": f.train_end.isoformat()} for f in folds]),
              out / "folds.csv")
    _manifest(out, "backtest", cfg, n_predictions=int(len(res.predictions)),
              degenerate_fits=[list(map(str, t)) for t in res.degenerate])
    return {"out": str(out), "predictions": int(len(res.predictions)), "folds": len(folds)}


def _fold_weeks(pred_path: Path):
    folds = pred_path.parent / "folds.csv"
    if not folds.exists():
        return None
    df = pd.read_csv(folds)
    return {int(r.fold): str(r.test_start)[:10] for r in df.itertuples()}


def _predictions(args):
    path = Path(args.predictions)
    if not path.exists():
        raise FileNotFoundError(f"predictions file not found: {path}")
    return path, read_predictions(path)


def cmd_report(args):
    cfg = _config(args)
    path, preds = _predictions(args)
    if not len(preds):
        raise DataError(f"{path}: no predictions")
    out = Path(args.out)
    write_report(preds, out, _fold_weeks(path), {"predictions_sha256": _file_digest(path),
                                                 "config_digest": cfg.digest()})
    _manifest(out, "report", cfg, predictions_sha256=_file_digest(path))
    return {"out": str(out)}


def cmd_dm_test(args):
    cfg = _config(args)
    path, preds = _predictions(args)
    period = PeriodId.parse(args.period).value
    preds = preds[preds["period"] == period]
    if args.model:
        preds = preds[preds["model"] == args.model]
    if not len(preds):
        raise DataError(f"{path}: no predictions for period {period}")
    combos = preds[["feature_set", "model"]].drop_duplicates().sort_values(["feature_set", "model"])
    multi = preds["model"].nunique() > 1
    series = {}
    for fs, m in combos.itertuples(index=False):
        name = f"{fs}/{m}" if multi else fs
        series[name] = error_series(preds, period, m, fs)
    mat = pairwise_matrix(series, args.significance)
    out = Path(args.out)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    csv = out / f"dm_matrix_{period}.csv"
    mat.to_csv(csv, lineterminator="\n", float_format="%.10g")
    fig = {"figure": f"dm_heatmap_{period}", "kind": "heatmap", "data": csv.name,
           "rows": list(mat.index), "cols": list(mat.columns),
           "value": "p-value that row is more accurate than column",
           "significance": args.significance, "config_digest": cfg.digest(),
           "predictions_sha256": _file_digest(path)}
    (out / "figures" / f"dm_{period}.json").write_text(json.dumps(fig, indent=1, sort_keys=True) + "\n")
    _manifest(out, "dm-test", cfg, period=period, predictions_sha256=_file_digest(path))
    return {"out": str(out), "size": len(series)}


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (see README for the schema)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="maximum worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    ap = argparse.ArgumentParser(prog="cidforecast",
                                 description="Direction forecasting for continuous intraday power markets.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic market to CSV")
    g.add_argument("--out", help="output directory (default: $CID_DATA_DIR)")
    g.add_argument("--days", type=int, help="override generator.days")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("featurize", parents=[common], help="build sample matrices from market CSVs")
    f.add_argument("--data", help="market data directory (default: $CID_DATA_DIR)")
    f.add_argument("--out", required=True, help="output directory for samples_*.csv")
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", parents=[common], help="fit models on one period/feature set")
    t.add_argument("--data", help="market data or featurize output directory")
    t.add_argument("--out", required=True, help="output directory for model JSON files")
    t.add_argument("--period", required=True, choices=[p.value for p in PeriodId])
    t.add_argument("--feature-set", required=True, choices=[s.value for s in FeatureSetId])
    t.add_argument("--model", help="train only the configured model with this name")
    t.add_argument("--train-start", help="first forecast time used (ISO date/time, UTC)")
    t.add_argument("--train-end", help="forecast times before this are used (ISO, UTC)")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("backtest", parents=[common], help="walk-forward evaluation")
    b.add_argument("--data", help="market data or featurize output directory")
    b.add_argument("--out", required=True, help="output directory for predictions.csv")
    b.set_defaults(func=cmd_backtest)

    d = sub.add_parser("dm-test", parents=[common], help="pairwise Diebold-Mariano matrix")
    d.add_argument("--predictions", required=True, help="predictions.csv from backtest")
    d.add_argument("--period", required=True, choices=[p.value for p in PeriodId])
    d.add_argument("--model", help="restrict to one model")
    d.add_argument("--significance", type=float, default=0.05)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dm_test)

    r = sub.add_parser("report", parents=[common], help="metrics, curves and figure manifests")
    r.add_argument("--predictions", required=True, help="predictions.csv from backtest")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return ap


def _error_record(exc: BaseException) -> dict:
    rec = {"error": type(exc).__name__, "message": str(getattr(exc, "bare", exc))}
    for key in ("file", "line"):
        if getattr(exc, key, None) is not None:
            rec[key] = getattr(exc, key)
    if isinstance(exc, FileNotFoundError):
        rec["file"] = str(exc).split(": ", 1)[-1]
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except (ConfigError, SchemaError, DataError, UsageError, FileNotFoundError, ValueError) as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, SchemaError, UsageError)) else 1
    print(canonical_json({"status": "ok", "command": args.command, **result}))
    return 0


if __name__ == "__main__":
    sys.exit(main())

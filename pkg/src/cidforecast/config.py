"""Run configuration: YAML schema, defaults and provenance digest.

Example::

    seed: 7
    threads: 1
    generator: {days: 60, momentum_rho: 0.6}
    features: {h_max: 10, delta_min: 1, horizon_min: 5}
    feature_sets: [current, lob_mw]
    periods: [P3to2, P2to1, P1toHalf]
    models:
      - {kind: logistic, params: {lam: 0.01}}
      - {kind: pls_gbdt, name: gbdt_small, params: {n_trees: 50}}
    folds: {n_folds: 8, train_days: 30, buffer_days: 1, min_train_days: 3}
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import yaml

from .backtest import ModelSpec
from .features import FeatureConfig, FeatureSetId
from .market import PeriodId
from .models import MODEL_KINDS, GbdtParams
from .synth import GeneratorConfig


class ConfigError(ValueError):
    """A configuration file violates the schema; carries the file and line."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None):
        where = f"{file}:{line}: " if file and line else (f"{file}: " if file else "")
        super().__init__(where + message)
        self.file = file
        self.line = line
        self.bare = message


@dataclass(frozen=True)
class FoldConfig:
    n_folds: int = 8
    train_days: int = 30
    buffer_days: int = 1
    test_days: int = 7
    min_train_days: float = 3.0
    test_start: date | None = None     # default: last n_folds weeks of the data

    def __post_init__(self):
        if isinstance(self.test_start, str):
            object.__setattr__(self, "test_start", date.fromisoformat(self.test_start))
        if self.n_folds < 1 or self.train_days < 1 or self.test_days < 1 or self.buffer_days < 0:
            raise ValueError("fold counts and spans must be positive")


@dataclass(frozen=True)
class FeatureSettings:
    h_max: int = 10
    delta_min: float = 1.0
    first_lead_min: int = 180
    last_lead_min: int = 35
    horizon_min: float = 5.0
    lob_depths: tuple[int, ...] = (1, 5, 10)
    min_vwsd: float = 1e-9
    selected_p2to1_include_h_plus2: bool = True

    def __post_init__(self):
        if self.delta_min <= 0 or self.horizon_min <= 0:
            raise ValueError("all durations must be positive")

    def to_feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.h_max, int(round(self.delta_min * 60)), self.first_lead_min,
                             self.last_lead_min, int(round(self.horizon_min * 60)),
                             tuple(self.lob_depths), self.min_vwsd,
                             self.selected_p2to1_include_h_plus2)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    data_dir: str | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    feature_sets: tuple[str, ...] = ("current",)
    periods: tuple[str, ...] = tuple(p.value for p in PeriodId)
    models: tuple[ModelSpec, ...] = (ModelSpec.of("logistic"),)
    folds: FoldConfig = field(default_factory=FoldConfig)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "threads": self.threads, "data_dir": self.data_dir,
            "generator": self.generator.to_dict(),
            "features": {**dataclasses.asdict(self.features),
                         "lob_depths": list(self.features.lob_depths)},
            "feature_sets": list(self.feature_sets), "periods": list(self.periods),
            "models": [{"name": m.name, "kind": m.kind, "params": dict(m.params)}
                       for m in self.models],
            "folds": {**dataclasses.asdict(self.folds),
                      "test_start": self.folds.test_start.isoformat()
                      if self.folds.test_start else None},
        }

    def digest(self) -> str:
        """sha256 of the canonical JSON form; threads and data_dir do not affect results."""
        body = self.to_dict()
        body.pop("threads")
        body.pop("data_dir")
        return hashlib.sha256(canonical_json(body).encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed,
                                   generator=dataclasses.replace(self.generator, seed=seed))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


# --------------------------------------------------------------------------
# Loading with line numbers
# --------------------------------------------------------------------------

def _key_lines(node, prefix=()) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers in the YAML source."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[prefix + (i,)] = v.start_mark.line + 1
            out.update(_key_lines(v, prefix + (i,)))
    return out


def _build(cls, data, path, lines, file):
    def fail(msg, at=path):
        line = next((lines[at[:k]] for k in range(len(at), 0, -1) if at[:k] in lines), None)
        raise ConfigError(msg, file, line)

    if data is None:
        data = {}
    if not isinstance(data, dict):
        fail(f"section '{'.'.join(map(str, path)) or 'root'}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            fail(f"unknown key '{key}'", path + (key,))
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        fail(str(exc))


def parse_config(raw: dict | None, file: str | None = None, lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    raw = dict(raw or {})

    def fail(msg, at):
        line = next((lines[at[:k]] for k in range(len(at), 0, -1) if at[:k] in lines), None)
        raise ConfigError(msg, file, line)

    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key in raw:
        if key not in top:
            fail(f"unknown key '{key}'", (key,))
    kw = {}
    for key in ("seed", "threads"):
        if key in raw:
            if not isinstance(raw[key], int) or isinstance(raw[key], bool):
                fail(f"'{key}' must be an integer", (key,))
            kw[key] = raw[key]
    if raw.get("data_dir") is not None:
        kw["data_dir"] = str(raw["data_dir"])
    gen = dict(raw.get("generator") or {})
    if "seed" in kw and "seed" not in gen:
        gen["seed"] = kw["seed"]
    kw["generator"] = _build(GeneratorConfig, gen, ("generator",), lines, file)
    kw["features"] = _build(FeatureSettings, raw.get("features"), ("features",), lines, file)
    try:
        kw["features"].to_feature_config()
    except ValueError as exc:
        fail(str(exc), ("features",))
    kw["folds"] = _build(FoldConfig, raw.get("folds"), ("folds",), lines, file)
    if "feature_sets" in raw:
        if not isinstance(raw["feature_sets"], list) or not raw["feature_sets"]:
            fail("'feature_sets' must be a non-empty list", ("feature_sets",))
        for i, fs in enumerate(raw["feature_sets"]):
            try:
                FeatureSetId.parse(fs)
            except ValueError as exc:
                fail(str(exc), ("feature_sets", i))
        kw["feature_sets"] = tuple(raw["feature_sets"])
    if "periods" in raw:
        if not isinstance(raw["periods"], list) or not raw["periods"]:
            fail("'periods' must be a non-empty list", ("periods",))
        for i, p in enumerate(raw["periods"]):
            try:
                PeriodId.parse(p)
            except ValueError as exc:
                fail(str(exc), ("periods", i))
        kw["periods"] = tuple(raw["periods"])
    if "models" in raw:
        specs = []
        if not isinstance(raw["models"], list) or not raw["models"]:
            fail("'models' must be a non-empty list", ("models",))
        for i, m in enumerate(raw["models"]):
            at = ("models", i)
            if isinstance(m, str):
                m = {"kind": m}
            if not isinstance(m, dict) or m.get("kind") not in MODEL_KINDS:
                fail(f"model entries need 'kind' in {list(MODEL_KINDS)}", at)
            extra = set(m) - {"kind", "name", "params"}
            if extra:
                fail(f"unknown key '{sorted(extra)[0]}'", at + (sorted(extra)[0],))
            params = dict(m.get("params") or {})
            allowed = ({"lam", "tol", "max_iter"} if m["kind"] == "logistic"
                       else {f.name for f in dataclasses.fields(GbdtParams)})
            for p in params:
                if p not in allowed:
                    fail(f"unknown {m['kind']} parameter '{p}'", at + ("params", p))
            specs.append(ModelSpec.of(m["kind"], m.get("name"), **params))
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            fail("model names must be unique", ("models",))
        kw["models"] = tuple(specs)
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", str(path),
                          mark.line + 1 if mark else None) from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", str(path), 1)
    return parse_config(raw, str(path), _key_lines(node) if node is not None else {})

import pytest

from cidforecast.config import ConfigError, RunConfig, load_config, parse_config


def write(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    return p


def test_defaults():
    cfg = parse_config({})
    fc = cfg.features.to_feature_config()
    assert (fc.h_max, fc.delta_s, fc.horizon_s) == (10, 60, 300)
    assert (fc.first_lead_min, fc.last_lead_min) == (180, 35)
    assert cfg.periods == ("P3to2", "P2to1", "P1toHalf")
    assert cfg.folds.n_folds == 8 and cfg.folds.train_days == 30 and cfg.folds.buffer_days == 1


def test_seed_propagates_to_generator(tmp_path):
    cfg = load_config(write(tmp_path, "seed: 42\n"))
    assert cfg.generator.seed == 42
    assert cfg.with_seed(3).generator.seed == 3


def test_digest_ignores_threads_and_paths():
    a = parse_config({"seed": 1, "threads": 1})
    b = parse_config({"seed": 1, "threads": 8, "data_dir": "/x"})
    c = parse_config({"seed": 2})
    assert a.digest() == b.digest() != c.digest()
    assert len(a.digest()) == 64


def test_models_section(tmp_path):
    cfg = load_config(write(tmp_path, "models:\n  - logistic\n"
                                      "  - {kind: pls_gbdt, name: g, params: {n_trees: 5}}\n"))
    assert [m.name for m in cfg.models] == ["logistic", "g"]
    assert dict(cfg.models[1].params) == {"n_trees": 5}


@pytest.mark.parametrize("text,line", [
    ("seed: 1\nbogus: 2\n", 2),
    ("seed: 1\nfeatures:\n  horizon_min: -5\n", 2),
    ("models:\n  - logistic\n  - {kind: svm}\n", 3),
    ("models:\n  - {kind: logistic, params: {depth: 2}}\n", 2),
    ("feature_sets: [current, nope]\n", 1),
    ("seed: [1\n", 2),  # unclosed bracket is detected at the end of the stream
    ("generator:\n  momentum_rho: 1.0\n", 1),
])
def test_schema_errors_carry_line(tmp_path, text, line):
    p = write(tmp_path, text)
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert e.value.file == str(p)
    assert e.value.line == line


def test_grid_must_end_before_gate(tmp_path):
    # 10 minutes before delivery plus a 5 minute horizon passes the 30 minute cut-off
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "features:\n  last_lead_min: 10\n"))


def test_run_config_is_frozen():
    with pytest.raises(Exception):
        RunConfig().seed = 3

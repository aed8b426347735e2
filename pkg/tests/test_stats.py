import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps
from statsmodels.tsa.stattools import adfuller

from cidforecast.stats import (ErrorSeries, Verdict, adf_critical_value, adf_test, dm_test,
                               error_series, pairwise_matrix)


def preds(rows):
    """rows: (product_start, direction, label[, model])"""
    return pd.DataFrame([{"period": "P2to1", "feature_set": "current",
                          "model": r[3] if len(r) > 3 else "logistic",
                          "product_start": r[0], "direction": r[1], "label": r[2]}
                         for r in rows])


# -------------------------------------------------------------- error series

def test_error_series_examples():
    s = error_series(preds([(0, "up", "up"), (3600, "down", "down")]), "P2to1")
    assert list(s.values) == [0.0, 0.0]
    rows = [(0, "up", "up")] * 3 + [(0, "up", "down")] + [(3600, "down", "up")]
    s = error_series(preds(rows), "P2to1")
    assert list(s.index) == [0, 3600] and list(s.values) == [0.25, 1.0]


def test_error_series_matches_groupby_oracle():
    rng = np.random.default_rng(0)
    rows = [(3600 * int(rng.integers(0, 30)), rng.choice(["up", "down"]),
             rng.choice(["up", "down"]), rng.choice(["a", "b"])) for _ in range(400)]
    df = preds(rows)
    s = error_series(df, "P2to1", model="a")
    want = {}
    for ps, d, lab, m in rows:
        if m == "a":
            want.setdefault(ps, []).append(d != lab)
    assert list(s.index) == sorted(want)
    assert np.allclose(s.values, [np.mean(want[k]) for k in sorted(want)])
    assert error_series(df, "P3to2").values.size == 0


def test_error_series_validation():
    with pytest.raises(ValueError):
        ErrorSeries(np.array([2, 1]), np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        ErrorSeries(np.array([1, 2]), np.array([0.1, 1.2]))


# ----------------------------------------------------------------------- ADF

def _ar(rng, n, phi):
    x = np.zeros(n)
    e = rng.normal(size=n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    return x


@pytest.mark.parametrize("seed,kind", [(0, "noise"), (1, "ar"), (2, "walk"), (3, "ar2"), (4, "short")])
def test_adf_matches_statsmodels(seed, kind):
    rng = np.random.default_rng(seed)
    if kind == "noise":
        y = rng.uniform(size=500)
    elif kind == "ar":
        y = _ar(rng, 300, 0.8)
    elif kind == "walk":
        y = np.cumsum(rng.normal(size=400))
    elif kind == "ar2":
        e = rng.normal(size=250)
        y = np.zeros(250)
        for i in range(2, 250):
            y[i] = 0.5 * y[i - 1] + 0.3 * y[i - 2] + e[i]
    else:
        y = rng.normal(size=40)
    res = adf_test(y)
    max_lag = int(math.floor(12 * (len(y) / 100) ** 0.25))
    stat, _, lag, nobs, crit, _ = adfuller(y, maxlag=max_lag, regression="c", autolag="AIC")
    assert res.applicable
    assert res.lag_used == lag and res.n_obs == nobs
    assert res.t_stat == pytest.approx(stat, rel=1e-8)
    assert res.critical_value == pytest.approx(crit["1%"], abs=1e-3)


def test_adf_fixed_lag_matches_statsmodels():
    rng = np.random.default_rng(5)
    y = _ar(rng, 200, 0.9)
    res = adf_test(y, max_lag=0)
    stat = adfuller(y, maxlag=0, regression="c", autolag=None)[0]
    assert res.lag_used == 0 and res.t_stat == pytest.approx(stat, rel=1e-10)


def test_adf_critical_values_against_known_points():
    # asymptotic 1% critical value, constant only
    assert adf_critical_value(10**9) == pytest.approx(-3.43035, abs=1e-6)
    assert adf_critical_value(100) < adf_critical_value(1000) < -3.43
    with pytest.raises(ValueError):
        adf_critical_value(100, 0.02)


def test_adf_monte_carlo_decisions():
    stationary = sum(adf_test(np.random.default_rng(s).uniform(size=500)).stationary
                     for s in range(20))
    walks = sum(not adf_test(np.cumsum(np.random.default_rng(100 + s).normal(size=500))).stationary
                for s in range(20))
    assert stationary >= 18
    assert walks >= 18


def test_adf_inapplicable():
    assert not adf_test(np.ones(100)).applicable
    assert not adf_test(np.arange(10.0)).applicable


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-1e3, 1e3),
       st.sampled_from([1.0, -1.0]))
def test_adf_affine_invariant(seed, c, d, sign):
    y = _ar(np.random.default_rng(seed), 120, 0.7)
    a, b = adf_test(y), adf_test(sign * c * y + d)
    assert a.lag_used == b.lag_used
    assert a.t_stat == pytest.approx(b.t_stat, rel=1e-6, abs=1e-9)
    assert a.stationary == b.stationary


# ------------------------------------------------------------------------ DM

def _dm_oracle(a, b):
    d = np.asarray(a) - np.asarray(b)
    n = len(d)
    dbar = sum(d) / n
    g0 = sum((x - dbar) ** 2 for x in d) / n
    stat = dbar / math.sqrt(g0 / n) * math.sqrt((n + 1 - 2) / n)
    return stat, sps.t.cdf(stat, n - 1)


def test_dm_statistic_matches_oracle():
    rng = np.random.default_rng(7)
    a, b = rng.uniform(size=80), rng.uniform(size=80) * 0.9 + 0.05
    res = dm_test(a, b)
    stat, p_a = _dm_oracle(a, b)
    assert res.statistic == pytest.approx(stat, rel=1e-12)
    assert res.p_a_better == pytest.approx(p_a, rel=1e-10)
    assert res.p_a_better + res.p_b_better == pytest.approx(1.0)


def test_dm_identical_series():
    a = np.random.default_rng(8).uniform(size=50)
    res = dm_test(a, a)
    assert res.verdict is Verdict.NO_DIFFERENCE and res.degenerate


def test_dm_constant_shift_is_sign_verdict():
    a = np.full(30, 0.2)
    res = dm_test(a, a + 0.1)
    assert res.verdict is Verdict.A_BETTER and res.p_a_better == 0.0 and res.degenerate


def test_dm_dominated_pair():
    hits = 0
    for s in range(20):
        b = np.random.default_rng(s).binomial(1, 0.5, size=100).astype(float)
        res = dm_test(np.zeros(100), b)
        hits += res.verdict is Verdict.A_BETTER and res.p_a_better < 0.05
    assert hits >= 19


@given(st.integers(0, 2**32 - 1))
def test_dm_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=40), rng.uniform(size=40)
    ab, ba = dm_test(a, b), dm_test(b, a)
    assert ab.statistic == -ba.statistic
    assert ab.p_a_better == ba.p_b_better
    assert 0 <= ab.p_value <= 1


def test_dm_p_value_monotone_in_statistic():
    rng = np.random.default_rng(9)
    base = rng.uniform(0.2, 0.8, size=60)
    noise = rng.normal(scale=0.05, size=60)
    prev = None
    for shift in (0.0, 0.01, 0.02, 0.04):
        r = dm_test(np.clip(base - shift + noise, 0, 1), base)
        if prev is not None:
            assert r.statistic < prev.statistic and r.p_a_better < prev.p_a_better
        prev = r


def test_dm_nonstationary_differential_inapplicable():
    walk = np.cumsum(np.random.default_rng(10).normal(size=200))
    a = (walk - walk.min()) / np.ptp(walk)
    res = dm_test(a, np.full(200, 0.5))
    assert res.verdict is Verdict.INAPPLICABLE and not res.adf_stationary


def test_dm_requires_twenty():
    with pytest.raises(ValueError):
        dm_test(np.zeros(10), np.ones(10))
    with pytest.raises(ValueError):
        dm_test(np.zeros(30), np.ones(31))


def test_dm_aligns_error_series():
    rng = np.random.default_rng(11)
    idx = np.arange(0, 3600 * 40, 3600)
    a = ErrorSeries(idx, rng.uniform(size=40))
    b = ErrorSeries(idx[5:], rng.uniform(size=35))
    assert dm_test(a, b).n == 35


# ------------------------------------------------------------------- matrix

def test_pairwise_matrix():
    rng = np.random.default_rng(12)
    idx = np.arange(100) * 3600
    good = ErrorSeries(idx, np.zeros(100))
    bad = ErrorSeries(idx, rng.binomial(1, 0.5, size=100).astype(float))
    same = ErrorSeries(idx, bad.values.copy())
    m = pairwise_matrix({"good": good, "bad": bad, "same": same})
    assert m.shape == (3, 3) and np.isnan(np.diag(m.to_numpy())).all()
    assert m.loc["good", "bad"] < 0.05 and m.loc["bad", "good"] > 0.95
    assert m.loc["bad", "same"] == pytest.approx(1.0) and m.loc["same", "bad"] == pytest.approx(1.0)

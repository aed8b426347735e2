"""Per-product error series, ADF unit-root pre-test and the small-sample DM test."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats as sps

# MacKinnon (2010) response surface, constant-only tau statistic, one series:
# crit(T) = b0 + b1/T + b2/T^2 + b3/T^3
ADF_CRIT_CONSTANT = {
    0.01: (-3.43035, -6.5393, -16.786, -79.433),
    0.05: (-2.86154, -2.8903, -4.234, -40.040),
    0.10: (-2.56677, -1.5384, -2.809, 0.0),
}


@dataclass(frozen=True)
class ErrorSeries:
    index: np.ndarray       # product delivery start, epoch seconds, strictly increasing
    values: np.ndarray      # error rate per product
    period: str = ""
    model: str = ""

    def __post_init__(self):
        idx = np.asarray(self.index, np.int64)
        val = np.asarray(self.values, float)
        if idx.shape != val.shape:
            raise ValueError("index and values differ in length")
        if len(idx) > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("error series index must be strictly increasing")
        if np.any((val < 0) | (val > 1)):
            raise ValueError("error rates must lie in [0, 1]")
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "values", val)

    def __len__(self) -> int:
        return len(self.index)


def error_series(preds: pd.DataFrame, period: str, model: str | None = None,
                 feature_set: str | None = None) -> ErrorSeries:
    """Error rate (1 - accuracy) of every product with predictions in ``period``."""
    sel = preds["period"] == period
    if model is not None:
        sel &= preds["model"] == model
    if feature_set is not None:
        sel &= preds["feature_set"] == feature_set
    df = preds[sel]
    wrong = (df["direction"] != df["label"]).astype(float)
    rate = wrong.groupby(df["product_start"].to_numpy()).mean().sort_index()
    tag = "/".join(x for x in (feature_set, model) if x)
    return ErrorSeries(rate.index.to_numpy(np.int64), rate.to_numpy(), period, tag)


@dataclass(frozen=True)
class AdfResult:
    applicable: bool
    stationary: bool
    t_stat: float
    lag_used: int
    n_obs: int
    critical_value: float


def adf_critical_value(n_obs: int, significance: float = 0.01) -> float:
    try:
        b0, b1, b2, b3 = ADF_CRIT_CONSTANT[significance]
    except KeyError:
        raise ValueError(f"no critical values for significance {significance}") from None
    return b0 + b1 / n_obs + b2 / n_obs ** 2 + b3 / n_obs ** 3


def _adf_design(y: np.ndarray, lags: int, start: int):
    """Regression of dy_t on (1, y_{t-1}, dy_{t-1..t-lags}) for t from ``start``."""
    dy = np.diff(y)
    t = np.arange(start, len(dy))
    cols = [np.ones(len(t)), y[t]] + [dy[t - j] for j in range(1, lags + 1)]
    return dy[t], np.column_stack(cols)


def _ols(target: np.ndarray, X: np.ndarray):
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    return beta, float(resid @ resid)


def adf_test(series, significance: float = 0.01, max_lag: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller test with a constant and AIC lag selection.

    Lags 0..floor(12 (n/100)^(1/4)) are compared on a common sample; the
    chosen lag is refitted on all usable observations.
    """
    y = np.asarray(series, float)
    n = len(y)
    if n < 20 or np.ptp(y) == 0.0 or not np.isfinite(y).all():
        return AdfResult(False, False, math.nan, 0, 0, math.nan)
    # the statistic is affine invariant; standardising keeps the design well conditioned
    y = (y - y.mean()) / y.std()
    if max_lag is None:
        max_lag = int(math.floor(12.0 * (n / 100.0) ** 0.25))
    max_lag = min(max_lag, n // 2 - 2)
    best_aic, best_lag = math.inf, 0
    for p in range(max_lag + 1):
        target, X = _adf_design(y, p, max_lag)
        _, ssr = _ols(target, X)
        m = len(target)
        llf = -0.5 * m * (math.log(2 * math.pi) + math.log(ssr / m) + 1.0)
        aic = -2.0 * llf + 2.0 * X.shape[1]
        if aic < best_aic:
            best_aic, best_lag = aic, p
    target, X = _adf_design(y, best_lag, best_lag)
    beta, ssr = _ols(target, X)
    m, k = X.shape
    sigma2 = ssr / (m - k)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    t_stat = float(beta[1] / math.sqrt(cov[1, 1]))
    crit = adf_critical_value(m, significance)
    return AdfResult(True, bool(t_stat < crit), t_stat, best_lag, m, crit)


class Verdict(str, enum.Enum):
    A_BETTER = "A_better"
    B_BETTER = "B_better"
    NO_DIFFERENCE = "no_difference"
    INAPPLICABLE = "inapplicable"


@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float          # one-sided p-value in the direction of the statistic
    p_a_better: float
    p_b_better: float
    n: int
    adf_stationary: bool
    verdict: Verdict
    degenerate: bool = False


def _align(a, b):
    if isinstance(a, ErrorSeries) and isinstance(b, ErrorSeries):
        common, ia, ib = np.intersect1d(a.index, b.index, return_indices=True)
        return a.values[ia], b.values[ib]
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError("series must have equal length")
    return a, b


def dm_test(series_a, series_b, significance: float = 0.05, horizon: int = 1) -> DmResult:
    """Diebold-Mariano test on loss differentials with the small-sample correction.

    Negative statistics favour ``series_a`` (lower error). ``ErrorSeries``
    inputs are aligned on their common products.
    """
    a, b = _align(series_a, series_b)
    n = len(a)
    if n < 20:
        raise ValueError(f"DM test needs at least 20 aligned observations, got {n}")
    d = a - b
    mean = float(d.mean())
    dc = d - mean
    gamma = [float(dc[k:] @ dc[: n - k]) / n for k in range(horizon)]
    var = gamma[0] + 2.0 * sum(gamma[1:])
    if np.ptp(d) == 0.0 or not var > 0.0:
        # all differentials equal: the sign decides, with certainty
        if mean == 0.0:
            return DmResult(0.0, 1.0, 1.0, 1.0, n, True, Verdict.NO_DIFFERENCE, True)
        a_wins = mean < 0
        stat = -math.inf if a_wins else math.inf
        return DmResult(stat, 0.0, 0.0 if a_wins else 1.0, 1.0 if a_wins else 0.0, n, True,
                        Verdict.A_BETTER if a_wins else Verdict.B_BETTER, True)
    h = horizon
    correction = math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
    stat = mean / math.sqrt(var / n) * correction
    p_a = float(sps.t.cdf(stat, df=n - 1))
    p_b = float(sps.t.sf(stat, df=n - 1))
    adf = adf_test(d, 0.01)
    if not (adf.applicable and adf.stationary):
        return DmResult(stat, min(p_a, p_b), p_a, p_b, n, False, Verdict.INAPPLICABLE)
    if p_a < significance:
        verdict = Verdict.A_BETTER
    elif p_b < significance:
        verdict = Verdict.B_BETTER
    else:
        verdict = Verdict.NO_DIFFERENCE
    return DmResult(stat, min(p_a, p_b), p_a, p_b, n, True, verdict)


def pairwise_matrix(series: dict[str, ErrorSeries], significance: float = 0.05) -> pd.DataFrame:
    """Entry (row, col): one-sided p-value that row's forecasts beat col's.

    The diagonal and pairs failing the stationarity pre-test are NaN.
    """
    names = list(series)
    out = pd.DataFrame(np.nan, index=names, columns=names)
    for i, r in enumerate(names):
        for j, c in enumerate(names):
            if i == j:
                continue
            res = dm_test(series[r], series[c], significance)
            if res.verdict is not Verdict.INAPPLICABLE:
                out.iloc[i, j] = res.p_a_better
    out.index.name = "row_better_than_col"
    return out

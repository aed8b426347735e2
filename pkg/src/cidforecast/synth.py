"""Seeded synthetic continuous-intraday market with tunable predictability.

Latent model
------------
Every hourly product carries a latent mid price on a one-minute grid. Its
one-minute return follows an AR(1) process whose innovation mixes a factor
shared by all products trading in the same minute with an idiosyncratic
shock::

    r[k] = rho * r[k-1] + sigma * (sqrt(c) * common[k] + sqrt(1 - c) * idio[k])

Quarter-hourly products add an independent AR(1) deviation to the latent mid
of the hour they belong to. Trades executed during minute ``(k, k+1]`` are
priced at the minute-``k`` mid plus a small noise term. A book snapshot taken
at minute boundary ``T`` is centred on the mid of minute ``T-1`` and its
volume imbalance leans toward a signal ``d[T]`` that equals the sign of the
upcoming return ``r[T]`` with probability ``(1 + lob_imbalance_signal) / 2``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta

import numpy as np
from scipy import signal, special

from .market import (
    HOUR, MINUTE, QUARTER, UTC, FundamentalRecord, Horizon, ImbalanceSeries, LobBook,
    MarketDataset, Product, TradeTape, to_epoch,
)


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    days: int = 14
    start: date = date(2024, 4, 1)
    base_price: float = 80.0
    momentum_rho: float = 0.3
    noise_sigma: float = 0.3
    trade_intensity_base: float = 1.0
    intensity_growth: float = 0.5
    lob_imbalance_signal: float = 0.0
    cross_product_corr: float = 0.5
    areas: tuple[str, ...] = ("DE",)
    # secondary knobs
    trade_noise: float = 0.05
    qh_intensity_factor: float = 0.5
    qh_dev_rho: float = 0.9
    qh_dev_sigma: float = 0.15
    open_lead_min: int = 360
    gate_closure_min: int = 5
    lob_levels: int = 10
    lob_first_lead_min: int = 190
    lob_last_lead_min: int = 30
    lob_tilt: float = 0.6
    lob_depth_mw: float = 2.0
    lob_gap: float = 0.15
    volume_log_mean: float = 0.3
    volume_log_sd: float = 0.7

    def __post_init__(self):
        if isinstance(self.start, str):
            object.__setattr__(self, "start", date.fromisoformat(self.start))
        object.__setattr__(self, "areas", tuple(self.areas))
        if not 0 <= self.momentum_rho < 1:
            raise ValueError("momentum_rho must lie in [0, 1)")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.trade_intensity_base <= 0:
            raise ValueError("trade_intensity_base must be positive")
        if not 0 <= self.lob_imbalance_signal <= 1:
            raise ValueError("lob_imbalance_signal must lie in [0, 1]")
        if not 0 <= self.cross_product_corr <= 1:
            raise ValueError("cross_product_corr must lie in [0, 1]")
        if self.days < 1 or not self.areas:
            raise ValueError("need at least one day and one delivery area")
        if not 0 <= self.lob_tilt < 1:
            raise ValueError("lob_tilt must lie in [0, 1)")
        if self.gate_closure_min < 1 or self.open_lead_min <= self.lob_first_lead_min:
            raise ValueError("trading must open before the book window and close before delivery")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = self.start.isoformat()
        d["areas"] = list(self.areas)
        return d


@dataclass
class SyntheticTruth:
    """Ground truth behind a generated dataset, for verification only."""

    hourly_starts: np.ndarray          # epoch seconds of hourly deliveries
    window_start: np.ndarray           # epoch seconds of each latent row's first minute
    returns: np.ndarray                # (n_hourly, n_minutes) latent one-minute returns
    mids: np.ndarray                   # (n_hourly, n_minutes) latent mids
    lob_signal: dict[int, np.ndarray] = field(default_factory=dict)


def fundamental_curves(delivery_start: datetime) -> dict[str, float]:
    """Noise-free load and renewable forecasts (MW) for an hourly delivery."""
    h = delivery_start.hour + delivery_start.minute / 60
    doy = delivery_start.timetuple().tm_yday
    season = math.cos(2 * math.pi * (doy - 172) / 365.25)
    load = 55_000 + 9_000 * math.sin(2 * math.pi * (h - 9) / 24) - 3_000 * season
    daylight = max(0.0, math.sin(math.pi * (h - 6) / 13)) if 6 <= h <= 19 else 0.0
    solar = 38_000 * daylight * (0.75 + 0.25 * season)
    wind_on = 14_000 + 6_000 * math.sin(2 * math.pi * doy / 9.0) - 3_000 * season
    wind_off = 3_500 + 1_500 * math.sin(2 * math.pi * doy / 6.0 + 1.0)
    return {"load": load, "solar": solar, "wind_onshore": wind_on, "wind_offshore": wind_off}


def _hour_shape(hours: np.ndarray) -> np.ndarray:
    return 15.0 * np.sin(2 * np.pi * (hours - 8) / 24) + 6.0 * np.cos(4 * np.pi * hours / 24)


def _ar1_paths(rng: np.random.Generator, innov: np.ndarray, rho: float,
               init_sd: float) -> np.ndarray:
    """Row-wise stationary AR(1) filter of ``innov``."""
    prev = rng.standard_normal(innov.shape[0]) * init_sd
    zi = (rho * prev)[:, None]
    out, _ = signal.lfilter([1.0], [1.0, -rho], innov, axis=1, zi=zi)
    return out


def generate(config: GeneratorConfig, return_truth: bool = False):
    """Build a :class:`MarketDataset`; fully determined by ``config``."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    rho, sigma, c = cfg.momentum_rho, cfg.noise_sigma, cfg.cross_product_corr

    first_day = datetime(cfg.start.year, cfg.start.month, cfg.start.day, tzinfo=UTC)
    # neighbours up to two hours either side of the covered days
    first_hour = first_day - 2 * HOUR
    n_hours = cfg.days * 24 + 4
    hour_starts = to_epoch(first_hour) + 3600 * np.arange(n_hours, dtype=np.int64)

    open_lead = cfg.open_lead_min
    n_min = open_lead + 60                    # latent row: [s - open_lead, s + 60)
    origin = int(hour_starts[0]) - open_lead * MINUTE
    n_abs = (int(hour_starts[-1]) - origin) // MINUTE + n_min
    common = rng.standard_normal(n_abs)
    idio = rng.standard_normal((n_hours, n_min))
    row0 = (hour_starts - origin) // MINUTE - open_lead
    abs_idx = row0[:, None] + np.arange(n_min)[None, :]
    innov = sigma * (math.sqrt(c) * common[abs_idx] + math.sqrt(1 - c) * idio)
    returns = _ar1_paths(rng, innov, rho, sigma / math.sqrt(1 - rho**2))
    hours_of_day = ((hour_starts // 3600) % 24).astype(float)
    level = cfg.base_price + _hour_shape(hours_of_day) + 5.0 * rng.standard_normal(n_hours)
    mids = level[:, None] + np.cumsum(returns, axis=1)

    # quarter-hour deviations over each quarter's own trading minutes
    n_trade_min = open_lead - cfg.gate_closure_min
    qh_dev = _ar1_paths(
        rng, cfg.qh_dev_sigma * rng.standard_normal((n_hours * 4, n_trade_min)),
        cfg.qh_dev_rho, cfg.qh_dev_sigma / math.sqrt(1 - cfg.qh_dev_rho**2),
    )

    # product table: hourly rows then quarters (row = 4 * hour + q)
    products = [Product(datetime.fromtimestamp(int(s), tz=UTC), HOUR) for s in hour_starts]
    quarters = [Product(p.delivery_start + q * QUARTER, QUARTER) for p in products for q in range(4)]
    n_prod = n_hours * 5
    elapsed_h = np.arange(n_trade_min) / 60.0
    lam = cfg.trade_intensity_base * (1.0 + cfg.intensity_growth * elapsed_h)
    factor = np.r_[np.ones(n_hours), np.full(n_hours * 4, cfg.qh_intensity_factor)]
    counts = rng.poisson(factor[:, None] * lam[None, :])            # (n_prod, n_trade_min)

    # trading-minute mids per product
    trade_mids = np.empty((n_prod, n_trade_min))
    trade_mids[:n_hours] = mids[:, :n_trade_min]
    q_off = np.tile(15 * np.arange(4), n_hours)
    parent = np.repeat(np.arange(n_hours), 4)
    cols = q_off[:, None] + np.arange(n_trade_min)[None, :]
    trade_mids[n_hours:] = mids[parent[:, None], cols] + qh_dev
    starts_all = np.r_[hour_starts, hour_starts[parent] + q_off * MINUTE]
    open_s = starts_all - open_lead * MINUTE

    flat = counts.ravel()
    total = int(flat.sum())
    prod_idx = np.repeat(np.repeat(np.arange(n_prod), n_trade_min), flat)
    minute_idx = np.repeat(np.tile(np.arange(n_trade_min), n_prod), flat)
    seconds = rng.integers(1, 61, size=total)
    times = open_s[prod_idx] + minute_idx * MINUTE + seconds
    prices = np.round(trade_mids[prod_idx, minute_idx]
                      + cfg.trade_noise * rng.standard_normal(total), 2)
    volumes = np.maximum(0.1, np.round(np.exp(cfg.volume_log_mean
                                              + cfg.volume_log_sd * rng.standard_normal(total)), 1))
    areas = np.asarray(cfg.areas, dtype=object)[rng.integers(0, len(cfg.areas), size=total)]
    order = np.lexsort((times, prod_idx))
    bounds = np.searchsorted(prod_idx[order], np.arange(n_prod + 1))
    all_products = products + quarters
    tapes = {}
    for j, prod in enumerate(all_products):
        sl = order[bounds[j]:bounds[j + 1]]
        tapes[prod] = TradeTape(times[sl], volumes[sl], prices[sl], areas[sl])

    lobs, lob_sig = _books(cfg, rng, products, hour_starts, mids, returns)
    fundamentals = _fundamentals(rng, products)
    imbalances = _imbalances(rng, origin, int(hour_starts[-1]) + 3600)

    end_day = first_day + timedelta(days=cfg.days)
    dataset = MarketDataset(tapes, lobs, fundamentals, imbalances, (first_day, end_day))
    if not return_truth:
        return dataset
    truth = SyntheticTruth(hour_starts, hour_starts - open_lead * MINUTE, returns, mids, lob_sig)
    return dataset, truth


def _books(cfg, rng, products, hour_starts, mids, returns):
    """Minute snapshots of hourly books over the configured lead-time window."""
    leads = np.arange(cfg.lob_first_lead_min, cfg.lob_last_lead_min - 1, -1)
    n_h, n_t, n_l = len(products), len(leads), cfg.lob_levels
    col = cfg.open_lead_min - leads                       # latent column of boundary T
    prev_mid = mids[:, col - 1]
    nxt = np.sign(returns[:, col])
    truthful = rng.random((n_h, n_t)) < 0.5 * (1.0 + cfg.lob_imbalance_signal)
    lean = np.where(truthful, nxt, -nxt)
    lean[lean == 0] = 1.0
    a = cfg.lob_tilt

    half_spread = 0.05 + 0.1 * rng.exponential(size=(n_h, n_t))
    sides = {}
    for side, sgn in (("bid", 1.0), ("ask", -1.0)):
        vol_f = (1.0 + sgn * a * lean)[..., None]
        gap_f = (1.0 - sgn * 0.5 * a * lean)[..., None]
        gaps = cfg.lob_gap * gap_f * rng.exponential(size=(n_h, n_t, n_l))
        gaps[..., 0] = 0.0
        offset = half_spread[..., None] + np.cumsum(gaps, axis=-1)
        px = np.round(prev_mid[..., None] - sgn * offset, 2)
        vol = rng.gamma(2.0, 0.5 * cfg.lob_depth_mw * vol_f, size=(n_h, n_t, n_l))
        sides[side] = (px, np.maximum(0.1, np.round(vol, 1)))

    lobs, lob_sig = {}, {}
    for i, prod in enumerate(products):
        t = hour_starts[i] - leads * MINUTE
        lobs[prod] = LobBook(t, sides["bid"][0][i], sides["bid"][1][i],
                             sides["ask"][0][i], sides["ask"][1][i])
        lob_sig[int(hour_starts[i])] = lean[i]
    return lobs, lob_sig


def _fundamentals(rng, products):
    recs = {}
    for prod in products:
        cur = fundamental_curves(prod.delivery_start)
        da = {k: max(0.0, v * (1 + 0.03 * rng.standard_normal())) for k, v in cur.items()}
        idf = {k: max(0.0, v * (1 + 0.02 * rng.standard_normal())) for k, v in da.items()}
        s = prod.start_s
        recs[(s, Horizon.DAY_AHEAD)] = FundamentalRecord(
            prod.delivery_start, Horizon.DAY_AHEAD, round(da["load"], 1), round(da["solar"], 1),
            round(da["wind_onshore"], 1), round(da["wind_offshore"], 1))
        recs[(s, Horizon.INTRADAY)] = FundamentalRecord(
            prod.delivery_start, Horizon.INTRADAY, None, round(idf["solar"], 1),
            round(idf["wind_onshore"], 1), round(idf["wind_offshore"], 1))
    return recs


def _imbalances(rng, start_s: int, end_s: int) -> ImbalanceSeries:
    q0 = start_s - start_s % (15 * MINUTE)
    quarters = np.arange(q0, end_s, 15 * MINUTE, dtype=np.int64)
    shocks = 250.0 * rng.standard_normal(len(quarters))
    saldo = signal.lfilter([1.0], [1.0, -0.8], shocks)
    delay = (15 + rng.integers(0, 31, size=len(quarters))) * MINUTE
    return ImbalanceSeries(quarters, np.round(saldo, 1), quarters + delay)


def bayes_accuracy_oracle(config: GeneratorConfig, n_draws: int = 1_000_000,
                          seed: int = 12345) -> float:
    """Monte-Carlo accuracy of the Bayes sign predictor for the next latent return.

    The predictor observes the current return and, through the book, the lean
    signal for the upcoming minute; it predicts the sign with the larger
    posterior probability. Draws come from a long stationary path simulated
    directly from the latent model, independent of :func:`generate`.
    """
    if n_draws < 100_000:
        raise ValueError("n_draws must be at least 1e5")
    rng = np.random.default_rng(seed)
    rho, sigma, c = config.momentum_rho, config.noise_sigma, config.cross_product_corr
    shocks = sigma * (math.sqrt(c) * rng.standard_normal(n_draws + 1)
                      + math.sqrt(1 - c) * rng.standard_normal(n_draws + 1))
    init = rng.standard_normal() * sigma / math.sqrt(1 - rho**2)
    r, _ = signal.lfilter([1.0], [1.0, -rho], shocks, zi=[rho * init])
    cur, nxt = r[:-1], r[1:]
    up = nxt > 0
    s = config.lob_imbalance_signal
    truthful = rng.random(n_draws) < 0.5 * (1.0 + s)
    lean = np.where(truthful, np.where(up, 1.0, -1.0), np.where(up, -1.0, 1.0))
    p_up = special.ndtr(rho * cur / sigma)
    like_up = 0.5 * (1.0 + s * lean)
    like_dn = 0.5 * (1.0 - s * lean)
    pred_up = p_up * like_up > (1.0 - p_up) * like_dn
    return float(np.mean(pred_up == up))

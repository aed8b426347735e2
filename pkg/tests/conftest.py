import os
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cidforecast.market import (Product, Trade, build_dataset, utc)
from cidforecast.synth import GeneratorConfig, generate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_market():
    return generate(GeneratorConfig(seed=3, days=2))


@pytest.fixture(scope="session")
def small_market_truth():
    return generate(GeneratorConfig(seed=4, days=2, momentum_rho=0.5), return_truth=True)


H10 = Product.hourly(utc(2024, 6, 1, 10))


def make_trades(product, rows, area="DE"):
    """rows: (seconds before delivery, volume, price)."""
    return [Trade(product, product.delivery_start - timedelta(seconds=s), v, p, area)
            for s, v, p in rows]


def tape_dataset(rows, product=H10, **kw):
    return build_dataset(make_trades(product, rows), **kw)


def random_rows(rng, n, span=4 * 3600):
    secs = rng.integers(1, span, size=n)
    vols = np.round(rng.uniform(0.1, 5.0, size=n), 1)
    prices = np.round(80 + rng.normal(0, 3, size=n), 2)
    return [(int(s), float(v), float(p)) for s, v, p in zip(secs, vols, prices)]

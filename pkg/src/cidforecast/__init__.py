"""Walk-forward direction forecasting for continuous intraday power markets."""

__version__ = "0.1.0"

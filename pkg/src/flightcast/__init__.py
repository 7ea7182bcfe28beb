"""Quarter-hour airport departure demand forecasting."""

__version__ = "0.1.0"

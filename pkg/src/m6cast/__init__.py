"""Online adaptive volatility forecasts and M6-style submission optimization."""

__version__ = "0.1.0"

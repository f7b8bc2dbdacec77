"""Wind power forecasting with a GBDT + GRU ensemble."""

__version__ = "0.1.0"

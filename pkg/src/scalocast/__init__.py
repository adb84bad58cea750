"""Day-ahead district heat demand forecasting from wavelet scalograms with a small CNN."""

__version__ = "0.1.0"

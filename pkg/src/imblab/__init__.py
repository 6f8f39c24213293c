"""Monte Carlo laboratory for class-imbalance corrections and calibration."""

__version__ = "0.1.0"

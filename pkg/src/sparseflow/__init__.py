"""Traffic speed estimation from sparse probe-vehicle data."""

__version__ = "0.1.0"

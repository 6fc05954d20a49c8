"""Fair cost allocation for prosumer aggregation on day-ahead and balancing markets."""

__version__ = "0.1.0"

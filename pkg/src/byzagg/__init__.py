"""Private Byzantine-resilient aggregation with nearest neighbor mixing over F_q."""

__version__ = "0.1.0"

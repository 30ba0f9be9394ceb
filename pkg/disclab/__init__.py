"""Average-case matrix discrepancy laboratory."""

__version__ = "1.0.0"

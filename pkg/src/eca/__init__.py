"""External control arm construction and estimand-aligned comparison."""

__version__ = "0.1.0"

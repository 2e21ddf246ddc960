"""Trade-network features and machine-learning models for next-year GDP growth."""

__version__ = "0.1.0"

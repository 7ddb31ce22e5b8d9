"""churnforge: churn scoring from call detail records on synthetic data."""

__version__ = "0.1.0"

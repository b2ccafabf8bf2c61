"""Fairness-regularized MIA decision trees for data with missing values."""

__version__ = "0.1.0"

"""Baseline methods, local feature attributions and top-K ablation for tabular data."""

__version__ = "0.1.0"

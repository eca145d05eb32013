"""Error budget, normal-mode, cooling and comparison-statistics toolkit for a
two-ion quantum-logic optical clock."""

__version__ = "0.1.0"

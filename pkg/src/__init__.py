"""
CoverageLens - conformal prediction intervals for drug-target interaction regression.
"""

__version__ = "1.0.0"

"""Outcome-adaptive propensity score estimation of average treatment effects with several arms."""

__version__ = "1.0.0"

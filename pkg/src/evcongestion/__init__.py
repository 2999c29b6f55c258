"""Charging-demand extraction, p-median station siting and M/G/s congestion analysis."""

__version__ = "0.1.0"

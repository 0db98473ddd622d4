"""Chagas potential prevalence index from call records, housing, health access and census data."""
__version__ = "0.1.0"

"""Recurrent networks trained by quotient gradient system minima enumeration,
applied to classifying distribution-grid events from PMU data."""

__version__ = "0.1.0"

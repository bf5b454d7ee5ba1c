"""Handover bias planning and race analysis for macro/pico networks."""

__version__ = "0.1.0"

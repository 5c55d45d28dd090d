"""Real-time power scheduling with a planning agent over an AC power-flow environment."""

__version__ = "0.1.0"

"""Figure rendering for the particle-training laboratory's CSV outputs."""

__version__ = "0.1.0"

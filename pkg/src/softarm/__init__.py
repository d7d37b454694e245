"""Open-loop modelling pipeline for a 3-segment soft pneumatic arm."""

__version__ = "0.1.0"

"""Adaptive hybrid face masking: frequency-domain masking, MixUp and a learned mix count."""

__version__ = "0.1.0"

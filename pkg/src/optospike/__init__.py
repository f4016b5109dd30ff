"""Minimal-time spike control of light-gated conductance-based neuron models."""

from . import chr2, integrate, neurons

__all__ = ["neurons", "chr2", "integrate"]
__version__ = "0.1.0"

"""Unfolded ISTA solvers for sparse coding with error-based thresholds."""

from .core import Dictionary, generalized_coherence
from .datagen import NoiseSpec, SparsityLaw
from .unfolded import Kind, Variant

__all__ = ["Dictionary", "Kind", "NoiseSpec", "SparsityLaw", "Variant", "generalized_coherence"]
__version__ = "0.1.0"

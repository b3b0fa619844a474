"""Constrained GFlowNet sampler for crystal descriptors (space group, composition, lattice)."""

__version__ = "0.1.0"

"""Proximal Galerkin finite elements for pointwise-constrained variational problems."""

__version__ = "0.1.0"

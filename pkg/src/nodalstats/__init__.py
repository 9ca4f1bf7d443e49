"""Nodal domain statistics of Gaussian random fields on the sphere."""

from .backend import ACTIVE_BACKEND, HAVE_NUMBA

__all__ = ["ACTIVE_BACKEND", "HAVE_NUMBA"]
__version__ = "0.1.0"

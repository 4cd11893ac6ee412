"""Dual-encoder retrieval training with ensembled soft correspondence targets."""
from .numerics import available_backends, current_backend, set_backend

__version__ = "0.1.0"

__all__ = ["available_backends", "current_backend", "set_backend", "__version__"]

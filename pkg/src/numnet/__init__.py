"""Numerical reading comprehension with a numerically-aware graph network."""

from numnet.estimator import NumNet

__version__ = "0.1.0"

__all__ = ["NumNet", "__version__"]

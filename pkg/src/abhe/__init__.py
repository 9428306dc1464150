"""Attention-based homography estimation, trained without labels.

The package is self-contained: a small taped autodiff tensor engine
(`abhe.tensor`, `abhe.ops`) with compiled hot kernels (`abhe.kernels`),
the network modules, synthetic data generation, and a CLI (``abhe``).
"""

from .tensor import Tape, Tensor, default_dtype

__version__ = "0.1.0"
__all__ = ["Tape", "Tensor", "default_dtype", "__version__"]

"""Second-stage HOI interaction recognition on precomputed fixtures."""

__version__ = "0.1.0"

from .tensor import Tensor, NumericError, backward, finite_diff_check

__all__ = ["Tensor", "NumericError", "backward", "finite_diff_check", "__version__"]

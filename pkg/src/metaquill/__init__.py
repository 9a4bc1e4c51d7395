"""Few-shot visual question generation in plain numpy.

Subpackages: autodiff engine, encoders, feature-wise conditioning,
attention decoder, meta-learning loops, rotation self-supervision,
dataset curation, text metrics, and a CLI wired around them.
"""

from .errors import MetaquillError, NumericError, ValidationError

__version__ = "0.1.0"

__all__ = ["MetaquillError", "NumericError", "ValidationError", "__version__"]

"""Face verification on concatenated low-resolution image pairs.

A pair of 20x20 faces is joined into one 20x40 image and classified
same-person / different-person by a small convolutional network; the
same-person probability is the verification score. The package covers
the full loop: synthetic galleries, pair generation, training,
checkpoints, and ROC-based evaluation.
"""

__version__ = "0.1.0"

from coffar.kernels import backend_name, extension_available

__all__ = ["backend_name", "extension_available", "__version__"]

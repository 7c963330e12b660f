"""scrollbin: document image binarization pipeline.

Classical thresholding baselines, multispectral band fusion, patch tiling,
a trainable encoder-decoder binarization network, and DIBCO-style evaluation
metrics, all behind one CLI.
"""

from .imagecore import BinaryMask, GrayImage, RgbImage, read_pnm, write_pnm

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "GrayImage",
    "RgbImage",
    "read_pnm",
    "write_pnm",
    "__version__",
]

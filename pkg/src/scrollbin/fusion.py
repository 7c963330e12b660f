"""Pseudo-color image fusion from three spectral band images.

Each band is an 8-bit grayscale capture of the same scene at one wavelength.
The fused image simply stacks them as R, G, B channels, which renders
information from all three bands at once. The operation itself is
wavelength-agnostic; by convention the 595 nm band goes to R, 924 nm to G,
and 638 nm to B.
"""

import numpy as np

from .errors import DimensionMismatchError
from .imagecore import GrayImage, RgbImage


def fuse_bands(band_r: GrayImage, band_g: GrayImage, band_b: GrayImage) -> RgbImage:
    """Stack three same-size grayscale bands into one RGB image.

    Raises DimensionMismatchError naming the offending band if the sizes
    disagree. Channel c of the output is bit-exactly the c-th input.
    """
    ref = (band_r.width, band_r.height)
    for name, band in (("g", band_g), ("b", band_b)):
        if (band.width, band.height) != ref:
            raise DimensionMismatchError(
                f"band {name} is {band.width}x{band.height}, expected {ref[0]}x{ref[1]} to match band r"
            )
    stacked = np.stack([band_r.pixels, band_g.pixels, band_b.pixels], axis=2)
    return RgbImage(stacked)

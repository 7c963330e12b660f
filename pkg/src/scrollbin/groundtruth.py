"""Turn expert-marked red-overlay images into binary ground-truth masks.

Labelers trace ink in red on top of the source image; exporting that layer
flattened over white gives an RGB image where ink is (near-)pure red. The
default thresholds tolerate the slight softening that editors introduce when
saving, and can be overridden for stricter or looser overlays.
"""

import numpy as np

from .imagecore import BinaryMask, RgbImage

RED_MIN = 200
GREEN_MAX = 80
BLUE_MAX = 80


def extract_gt(
    marked: RgbImage, red_min: int = RED_MIN, green_max: int = GREEN_MAX, blue_max: int = BLUE_MAX
) -> BinaryMask:
    """A pixel is ink iff R >= red_min and G <= green_max and B <= blue_max."""
    px = marked.pixels
    ink = (px[:, :, 0] >= red_min) & (px[:, :, 1] <= green_max) & (px[:, :, 2] <= blue_max)
    return BinaryMask(ink)

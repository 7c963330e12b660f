"""Split arbitrary-size images into fixed-size square patches and reassemble.

Tiles are non-overlapping and row-major. Edge tiles are padded on the right
and bottom to the full patch size; the default padding replicates edge pixels
so no artificial ink/background boundary is created at tile borders.
Reassembly discards the padding and restores the original dimensions, so
reassemble(split(x)) == x for any image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ScrollbinError
from .imagecore import BinaryMask, GrayImage, Image, RgbImage

PAD_MODES = ("replicate", "zero", "white")


@dataclass
class PatchGrid:
    """Row-major grid of patch_size x patch_size tiles covering an image.

    rows = ceil(orig_height / patch_size), cols = ceil(orig_width / patch_size);
    patches holds rows*cols images, each exactly patch_size square.
    """

    patch_size: int
    rows: int
    cols: int
    orig_width: int
    orig_height: int
    patches: list

    def patch_at(self, row: int, col: int):
        return self.patches[row * self.cols + col]

    def with_patches(self, patches: list) -> "PatchGrid":
        """Same geometry, new patch contents (e.g. per-patch network outputs)."""
        return PatchGrid(self.patch_size, self.rows, self.cols, self.orig_width, self.orig_height, list(patches))


def _pad_array(arr: np.ndarray, pad_h: int, pad_w: int, mode: str) -> np.ndarray:
    spatial = ((0, pad_h), (0, pad_w)) + ((0, 0),) * (arr.ndim - 2)
    if mode == "replicate":
        return np.pad(arr, spatial, mode="edge")
    if mode == "zero":
        return np.pad(arr, spatial, mode="constant", constant_values=0)
    if mode == "white":
        fill = 255 if arr.dtype == np.uint8 else 0
        return np.pad(arr, spatial, mode="constant", constant_values=fill)
    raise ScrollbinError(f"unknown pad mode {mode!r}; expected one of {PAD_MODES}")


def _wrap_like(template: Image, arr: np.ndarray) -> Image:
    if isinstance(template, GrayImage):
        return GrayImage(arr)
    if isinstance(template, RgbImage):
        return RgbImage(arr)
    return BinaryMask(arr)


def split(img: Image, patch_size: int = 256, pad_mode: str = "replicate") -> PatchGrid:
    """Tile an image into a PatchGrid of patch_size squares."""
    if patch_size < 1:
        raise ScrollbinError(f"patch_size must be >= 1, got {patch_size}")
    arr = img.ink if isinstance(img, BinaryMask) else img.pixels
    rows = -(-img.height // patch_size)
    cols = -(-img.width // patch_size)
    padded = _pad_array(arr, rows * patch_size - img.height, cols * patch_size - img.width, pad_mode)
    patches = []
    for r in range(rows):
        for c in range(cols):
            tile = padded[r * patch_size : (r + 1) * patch_size, c * patch_size : (c + 1) * patch_size]
            patches.append(_wrap_like(img, np.ascontiguousarray(tile)))
    return PatchGrid(patch_size, rows, cols, img.width, img.height, patches)


def reassemble(grid: PatchGrid) -> Image:
    """Stitch a PatchGrid back into a single orig_width x orig_height image.

    Padding regions are discarded; every interior pixel lands at its original
    coordinate. The output type follows the patch type, so a grid whose
    patches were replaced by BinaryMask outputs reassembles into a mask.
    """
    if len(grid.patches) != grid.rows * grid.cols:
        raise ScrollbinError(
            f"grid holds {len(grid.patches)} patches, expected rows*cols = {grid.rows * grid.cols}"
        )
    p = grid.patch_size
    first = grid.patches[0]
    for patch in grid.patches:
        if patch.width != p or patch.height != p or type(patch) is not type(first):
            raise ScrollbinError("inconsistent patch shape or type in grid")

    sample = first.ink if isinstance(first, BinaryMask) else first.pixels
    out_shape = (grid.rows * p, grid.cols * p) + sample.shape[2:]
    canvas = np.empty(out_shape, dtype=sample.dtype)
    for r in range(grid.rows):
        for c in range(grid.cols):
            patch = grid.patch_at(r, c)
            arr = patch.ink if isinstance(patch, BinaryMask) else patch.pixels
            canvas[r * p : (r + 1) * p, c * p : (c + 1) * p] = arr
    cropped = np.ascontiguousarray(canvas[: grid.orig_height, : grid.orig_width])
    return _wrap_like(first, cropped)

import numpy as np
import pytest

from scrollbin.errors import ScrollbinError
from scrollbin.imagecore import BinaryMask, GrayImage, RgbImage
from scrollbin.tiling import PatchGrid, reassemble, split


def random_gray(rng, w, h):
    return GrayImage(rng.integers(0, 256, (h, w), dtype=np.uint8))


def test_fragment_size_gives_165_patches():
    img = GrayImage(np.zeros((3608, 2706), dtype=np.uint8))
    grid = split(img, 256)
    assert grid.rows == 15 and grid.cols == 11
    assert len(grid.patches) == 165
    assert all(p.width == 256 and p.height == 256 for p in grid.patches)


def test_exact_fit_single_patch():
    rng = np.random.default_rng(0)
    img = random_gray(rng, 256, 256)
    grid = split(img, 256)
    assert len(grid.patches) == 1
    assert np.array_equal(grid.patches[0].pixels, img.pixels)


def test_edge_padding_replicates():
    rng = np.random.default_rng(1)
    img = random_gray(rng, 100, 100)
    grid = split(img, 256)
    patch = grid.patches[0].pixels
    assert np.array_equal(patch[:100, :100], img.pixels)
    # right padding copies the last column, bottom padding the last row
    assert np.all(patch[:100, 100:] == img.pixels[:, -1:])
    assert np.all(patch[100:, :100] == img.pixels[-1:, :])
    assert np.all(patch[100:, 100:] == img.pixels[-1, -1])


def test_zero_and_white_padding():
    img = GrayImage(np.full((3, 3), 9, dtype=np.uint8))
    assert np.all(split(img, 4, "zero").patches[0].pixels[3, :] == 0)
    assert np.all(split(img, 4, "white").patches[0].pixels[3, :] == 255)
    with pytest.raises(ScrollbinError):
        split(img, 4, "mirror")


def test_roundtrip_random_sizes():
    rng = np.random.default_rng(2)
    for _ in range(25):
        w = int(rng.integers(1, 600))
        h = int(rng.integers(1, 600))
        patch = int(rng.integers(1, 300))
        img = random_gray(rng, w, h)
        grid = split(img, patch)
        assert grid.rows == -(-h // patch) and grid.cols == -(-w // patch)
        out = reassemble(grid)
        assert isinstance(out, GrayImage)
        assert np.array_equal(out.pixels, img.pixels)


def test_roundtrip_rgb_and_mask():
    rng = np.random.default_rng(3)
    rgb = RgbImage(rng.integers(0, 256, (70, 45, 3), dtype=np.uint8))
    assert np.array_equal(reassemble(split(rgb, 32)).pixels, rgb.pixels)
    mask = BinaryMask(rng.random((70, 45)) < 0.5)
    assert np.array_equal(reassemble(split(mask, 32)).ink, mask.ink)


def test_locality_of_patch_edits():
    rng = np.random.default_rng(4)
    img = random_gray(rng, 300, 300)
    grid = split(img, 128)
    edited = [BinaryMask(np.zeros((128, 128), dtype=bool)) for _ in grid.patches]
    target = 1 * grid.cols + 2  # row 1, col 2
    edited[target] = BinaryMask(np.ones((128, 128), dtype=bool))
    out = reassemble(grid.with_patches(edited))
    assert isinstance(out, BinaryMask)
    expect = np.zeros((300, 300), dtype=bool)
    expect[128:256, 256:300] = True
    assert np.array_equal(out.ink, expect)


def test_reassemble_validates_grid():
    rng = np.random.default_rng(5)
    grid = split(random_gray(rng, 100, 100), 64)
    with pytest.raises(ScrollbinError):
        reassemble(grid.with_patches(grid.patches[:-1]))
    bad = list(grid.patches)
    bad[0] = GrayImage(np.zeros((32, 32), dtype=np.uint8))
    with pytest.raises(ScrollbinError):
        reassemble(grid.with_patches(bad))


def test_patch_size_must_be_positive():
    with pytest.raises(ScrollbinError):
        split(GrayImage(np.zeros((4, 4), dtype=np.uint8)), 0)


def test_grid_accessor():
    rng = np.random.default_rng(6)
    img = random_gray(rng, 100, 60)
    grid = split(img, 40)
    assert grid.patch_at(1, 2) is grid.patches[1 * grid.cols + 2]
    assert isinstance(grid, PatchGrid)

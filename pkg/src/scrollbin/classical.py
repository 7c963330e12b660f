"""Classical thresholding baselines: global/local Otsu, Niblack, Sauvola.

All four map a GrayImage to a BinaryMask under the fixed convention that
darker pixels are ink: a pixel is ink iff its value is <= the threshold.
Local window statistics are computed over the window clamped to the image
bounds, so only real pixels contribute. Windows must be odd so they center
on the pixel; the conventional 70x70 window snaps to 71.
"""

from __future__ import annotations

import numpy as np

from .errors import ScrollbinError
from .imagecore import BinaryMask, GrayImage

DEFAULT_WINDOW = 71
NIBLACK_K = -0.2
SAUVOLA_K = 0.5
SAUVOLA_R = 128.0


# ---------------------------------------------------------------------------
# Global Otsu
# ---------------------------------------------------------------------------


def otsu_global(img: GrayImage) -> tuple[int, BinaryMask]:
    """Threshold maximizing the between-class variance of the histogram.

    Returns (threshold, mask) where mask marks pixels <= threshold as ink.
    The argmax is computed in exact integer arithmetic with ties broken
    toward the smallest threshold. A constant image has zero between-class
    variance everywhere and degenerates to threshold 0 with an all-background
    mask.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    t = _otsu_threshold_exact(hist)
    if t is None:
        return 0, BinaryMask(np.zeros_like(img.pixels, dtype=np.bool_))
    return t, BinaryMask(img.pixels <= t)


def _otsu_threshold_exact(hist) -> int | None:
    """Exact integer argmax of sigma_B^2 over t in [0, 255]; None if degenerate.

    sigma_B^2(t) = w0 w1 (mu0 - mu1)^2 = (S0*n1 - S1*n0)^2 / (n^2 * n0 * n1);
    the constant n^2 is dropped and candidates are compared by integer
    cross-multiplication, so no floating rounding can flip a tie.
    """
    counts = [int(c) for c in hist]
    n = sum(counts)
    s = sum(v * c for v, c in enumerate(counts))

    best_t = None
    best_num = best_den = 0  # score = num/den
    n0 = s0 = 0
    for t in range(256):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * n1 - (s - s0) * n0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


# ---------------------------------------------------------------------------
# Clamped-window statistics via integral images
# ---------------------------------------------------------------------------


def _check_window(window: int) -> int:
    """Half-width h of the centered window, which spans 2h+1 pixels.

    Even sizes snap up to the next odd one (70 becomes 71), so windows always
    center on their pixel.
    """
    if window < 3:
        raise ScrollbinError(f"window must be >= 3, got {window}")
    return window // 2


def _window_bounds(size: int, half: int):
    idx = np.arange(size)
    lo = np.clip(idx - half, 0, size)
    hi = np.clip(idx + half + 1, 0, size)
    return lo, hi


def window_mean_std(img: GrayImage, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel mean and population std over the edge-clamped window.

    Integral images of the values and their squares give O(1) statistics per
    pixel. Sums stay in int64 (exact); the variance is clamped at 0 to absorb
    the roundoff of the mean-square subtraction.
    """
    half = _check_window(window)
    h, w = img.pixels.shape
    vals = img.pixels.astype(np.int64)

    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral_sq = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = vals.cumsum(0).cumsum(1)
    integral_sq[1:, 1:] = (vals * vals).cumsum(0).cumsum(1)

    y0, y1 = _window_bounds(h, half)
    x0, x1 = _window_bounds(w, half)
    count = (y1 - y0)[:, None] * (x1 - x0)[None, :]

    def box(table):
        return (
            table[y1[:, None], x1[None, :]]
            - table[y0[:, None], x1[None, :]]
            - table[y1[:, None], x0[None, :]]
            + table[y0[:, None], x0[None, :]]
        )

    total = box(integral).astype(np.float64)
    total_sq = box(integral_sq).astype(np.float64)
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    return mean, np.sqrt(var)


def niblack(img: GrayImage, window: int = DEFAULT_WINDOW, k: float = NIBLACK_K) -> BinaryMask:
    """Niblack local threshold T = m + k*s; ink iff value <= T."""
    mean, std = window_mean_std(img, window)
    thresh = mean + k * std
    return BinaryMask(img.pixels.astype(np.float64) <= thresh)


def sauvola(
    img: GrayImage, window: int = DEFAULT_WINDOW, k: float = SAUVOLA_K, r: float = SAUVOLA_R
) -> BinaryMask:
    """Sauvola local threshold T = m * (1 + k*(s/R - 1)); ink iff value <= T."""
    if r <= 0:
        raise ScrollbinError(f"R must be positive, got {r}")
    mean, std = window_mean_std(img, window)
    thresh = mean * (1.0 + k * (std / r - 1.0))
    return BinaryMask(img.pixels.astype(np.float64) <= thresh)


# ---------------------------------------------------------------------------
# Local Otsu
# ---------------------------------------------------------------------------

# Memory cap for one strip of the 256-bin integral histogram.
_STRIP_BUDGET_BYTES = 256 * 1024 * 1024


def otsu_local(img: GrayImage, window: int = DEFAULT_WINDOW) -> BinaryMask:
    """Per-pixel Otsu threshold over the edge-clamped window.

    A pixel is ink iff its value is <= the Otsu threshold of its own window
    histogram. Windows with a constant histogram have no valid split and the
    pixel is classified background, which keeps blank margins blank.
    """
    half = _check_window(window)
    h, w = img.pixels.shape

    strip = max(1, _STRIP_BUDGET_BYTES // ((w + 1) * 256 * 4) - (window + 1))
    ink = np.empty((h, w), dtype=np.bool_)
    for r0 in range(0, h, strip):
        r1 = min(h, r0 + strip)
        ink[r0:r1] = _otsu_local_strip(img.pixels, r0, r1, half)
    return BinaryMask(ink)


def _otsu_local_strip(pixels: np.ndarray, r0: int, r1: int, half: int) -> np.ndarray:
    h, w = pixels.shape
    lo = max(0, r0 - half)
    hi = min(h, r1 + half + 1)
    sub = pixels[lo:hi]

    onehot = sub[:, :, None] == np.arange(256, dtype=np.uint8)
    integral = np.zeros((sub.shape[0] + 1, w + 1, 256), dtype=np.int32)
    integral[1:, 1:] = onehot.astype(np.int32).cumsum(0).cumsum(1)

    y0 = np.clip(np.arange(r0, r1) - half, 0, h) - lo
    y1 = np.clip(np.arange(r0, r1) + half + 1, 0, h) - lo
    x0, x1 = _window_bounds(w, half)

    hists = (
        integral[y1[:, None], x1[None, :]]
        - integral[y0[:, None], x1[None, :]]
        - integral[y1[:, None], x0[None, :]]
        + integral[y0[:, None], x0[None, :]]
    ).reshape(-1, 256)

    thresholds = _otsu_thresholds_vectorized(hists)
    values = pixels[r0:r1].reshape(-1).astype(np.int32)
    out = (values <= thresholds) & (thresholds >= 0)
    return out.reshape(r1 - r0, w)


def _otsu_thresholds_vectorized(hists: np.ndarray) -> np.ndarray:
    """Row-wise Otsu over a (P, 256) histogram batch; -1 marks degenerate rows.

    Scores are (S0*n1 - S1*n0)^2 / (n0*n1). The squared term can exceed int64
    so it is evaluated in float64; first-max argmax keeps ties deterministic.
    """
    out = np.full(hists.shape[0], -1, dtype=np.int32)
    chunk = 16384
    vals = np.arange(256, dtype=np.int64)
    for start in range(0, hists.shape[0], chunk):
        hc = hists[start : start + chunk].astype(np.int64)
        n0 = hc.cumsum(axis=1)
        s0 = (hc * vals).cumsum(axis=1)
        n = n0[:, -1:]
        s = s0[:, -1:]
        n1 = n - n0
        valid = (n0 > 0) & (n1 > 0)
        diff = (s0 * n1 - (s - s0) * n0).astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(valid, diff * diff / (n0 * n1), -1.0)
        t = score.argmax(axis=1).astype(np.int32)
        degenerate = ~valid.any(axis=1)
        t[degenerate] = -1
        out[start : start + chunk] = t
    return out

"""Distortion and rate-distortion comparison metrics."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_IDENTICAL = float("inf")


def psnr(a, b, peak=255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak * peak / mse))


def _ssim_slice(x, y, sigma, k1, k2, data_range):
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def blur(z):
        return gaussian_filter(z, sigma, truncate=3.5, mode="reflect")

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    r = int(3.5 * sigma + 0.5)
    return s[r:-r, r:-r].mean()


def ssim(a, b, sigma=1.5, k1=0.01, k2=0.03, data_range=255.0) -> float:
    """Gaussian-window SSIM of each axial slice, averaged over slices.

    The 11x11 window (sigma 1.5) is evaluated only where it fits inside the
    slice.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3 or min(a.shape[1:]) < 11:
        raise ValueError(f"slices must be at least 11x11, got shape {a.shape}")
    return float(np.mean([_ssim_slice(x, y, sigma, k1, k2, data_range) for x, y in zip(a, b)]))


def bd_psnr(curve_a, curve_b) -> float:
    """Average PSNR gain of ``curve_b`` over ``curve_a`` (Bjontegaard delta).

    Each curve is a sequence of ``(bpp, psnr)`` points.  PSNR is fit as a
    cubic in log10(rate) and the fits are integrated over the shared rate
    interval.
    """
    ra, da = _curve(curve_a)
    rb, db = _curve(curve_b)
    lo = max(ra.min(), rb.min())
    hi = min(ra.max(), rb.max())
    if not hi > lo:
        raise ValueError("rate ranges of the two curves do not overlap")
    pa = np.polyint(np.polyfit(ra, da, 3))
    pb = np.polyint(np.polyfit(rb, db, 3))
    area_a = np.polyval(pa, hi) - np.polyval(pa, lo)
    area_b = np.polyval(pb, hi) - np.polyval(pb, lo)
    return float((area_b - area_a) / (hi - lo))


def bd_metrics(curve_a, curve_b) -> float:
    return bd_psnr(curve_a, curve_b)


def _curve(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise ValueError("a curve needs at least 4 (bpp, quality) points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("curve points must be finite (drop lossless points with infinite PSNR)")
    if np.any(pts[:, 0] <= 0):
        raise ValueError("rates must be positive")
    return np.log10(pts[:, 0]), pts[:, 1]

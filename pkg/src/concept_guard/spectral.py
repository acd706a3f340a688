"""Fourier-domain re-attention of latent feature grids.

Filtering the prompt can leave the denoiser over-committed to low-frequency
structure it laid down in early steps. This module compares the filtered
branch's latent features against the unfiltered branch's in frequency space
and damps exactly those low-frequency coefficients where the filtered branch
grew louder than the original.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensions, InvalidParameter, NonFiniteInput

COMPARISON_MODES = ("greater", "less")


@dataclass(frozen=True, eq=False)
class FreqMask:
    """Boolean (H, W) grid marking the low-frequency region in the shifted
    (DC-centered) transform layout, plus the fraction that built it."""

    grid: np.ndarray
    rho: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool).copy()
        if grid.ndim != 2:
            raise InvalidDimensions("frequency mask grid must be 2-D")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)


def as_latent(a, name: str = "latent") -> np.ndarray:
    """Coerce to a finite float64 (channels, H, W) array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidDimensions(f"{name} must be 3-D (channels, height, width), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise InvalidDimensions(f"{name} has an empty axis: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains NaN or infinity")
    return arr


def build_lowfreq_mask(height: int, width: int, rho: float) -> FreqMask:
    """Centered low-frequency rectangle of ceil(rho*H) x ceil(rho*W) bins.

    The rectangle is placed in the shifted layout so that the DC bin at
    (H//2, W//2) is inside it whenever rho > 0; rho == 0 selects nothing and
    rho == 1 selects everything.
    """
    if height < 1 or width < 1:
        raise InvalidDimensions(f"mask dimensions must be positive, got {height}x{width}")
    if not np.isfinite(rho) or not 0.0 <= rho <= 1.0:
        raise InvalidParameter(f"rho must lie in [0, 1], got {rho}")
    grid = np.zeros((height, width), dtype=bool)
    side_h = math.ceil(rho * height)
    side_w = math.ceil(rho * width)
    if side_h > 0 and side_w > 0:
        r0 = height // 2 - side_h // 2
        c0 = width // 2 - side_w // 2
        grid[r0 : r0 + side_h, c0 : c0 + side_w] = True
    return FreqMask(grid, float(rho))


def reattend(h_orig, h_safe, mask: FreqMask, scale: float, comparison: str = "greater") -> np.ndarray:
    """Damp low-frequency coefficients of the filtered branch that outgrew the
    original branch.

    Per channel: transform both grids, center the spectra, and inside the mask
    multiply a filtered-branch coefficient by ``scale`` when its magnitude
    compares ``comparison``-wise against the original branch's ("greater" by
    default). Everything outside the mask, and every coefficient that fails
    the comparison, passes through unchanged. Channels where nothing qualifies
    are returned bit-for-bit, skipping the transform round trip entirely.
    """
    h_orig = as_latent(h_orig, "original latent")
    h_safe = as_latent(h_safe, "filtered latent")
    if h_orig.shape != h_safe.shape:
        raise InvalidDimensions(
            f"latent shapes differ: {h_orig.shape} vs {h_safe.shape}"
        )
    if not np.isfinite(scale) or not 0.0 < scale <= 1.0:
        raise InvalidParameter(f"scale must lie in (0, 1], got {scale}")
    if comparison not in COMPARISON_MODES:
        raise InvalidParameter(f"comparison must be one of {COMPARISON_MODES}, got {comparison!r}")
    channels, height, width = h_safe.shape
    if mask.grid.shape != (height, width):
        raise InvalidDimensions(
            f"mask shape {mask.grid.shape} does not match latent plane {(height, width)}"
        )
    out = np.empty_like(h_safe)
    for c in range(channels):
        f_orig = np.fft.fftshift(np.fft.fft2(h_orig[c]))
        f_safe = np.fft.fftshift(np.fft.fft2(h_safe[c]))
        if comparison == "greater":
            louder = np.abs(f_safe) > np.abs(f_orig)
        else:
            louder = np.abs(f_safe) < np.abs(f_orig)
        selected = mask.grid & louder
        if scale == 1.0 or not selected.any():
            out[c] = h_safe[c]
            continue
        f_safe = f_safe.copy()
        f_safe[selected] *= scale
        out[c] = np.fft.ifft2(np.fft.ifftshift(f_safe)).real
    return out

"""Classical interference mitigation on time-domain cubes ``[N_R, N_D, N_A]``.

All methods share one interference mask ``[N_R, N_D]`` across antennas,
since a crossing chirp hits every receiver at the same instant.
"""
from __future__ import annotations

import warnings

import numpy as np

from .tensor import DTYPE, dft_axis


class FullSweepMaskedWarning(UserWarning):
    """IMAT was asked to reconstruct a sweep without any intact sample."""


def _cube(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"expected a rank-3 time cube, got shape {arr.shape}")
    return arr


def _mask(mask, cube: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape != cube.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match cube {cube.shape[:2]}")
    return m


def detect_interference(cube, c_mad: float = 6.0) -> np.ndarray:
    """Flag samples whose antenna-summed magnitude is an outlier within its sweep.

    Threshold per sweep: ``median + c_mad * MAD`` of the fast-time magnitudes.
    """
    if c_mad <= 0:
        raise ValueError("c_mad must be positive")
    mag = np.sum(np.abs(_cube(cube)), axis=2, dtype=np.float64)
    med = np.median(mag, axis=0, keepdims=True)
    mad = np.median(np.abs(mag - med), axis=0, keepdims=True)
    return mag > med + c_mad * mad


def zeroing(cube, mask) -> np.ndarray:
    x = _cube(cube)
    m = _mask(mask, x)
    return np.where(m[:, :, None], np.zeros((), dtype=x.dtype), x)


def ramp_filter(cube, alpha_r: float = 2.0) -> np.ndarray:
    """Clip magnitudes across FM sweeps to ``alpha_r`` times their median.

    Works lane by lane over slow time (fixed fast-time index and antenna);
    clipped samples keep their phase.
    """
    if alpha_r <= 1:
        raise ValueError("alpha_r must exceed 1")
    x = _cube(cube)
    mag = np.abs(x).astype(np.float64)
    thr = alpha_r * np.median(mag, axis=1, keepdims=True)
    over = mag > thr
    scale = np.where(over, thr / np.where(over, mag, 1.0), 1.0)
    return np.where(over, x * scale, x).astype(x.dtype)


def imat(cube, mask, iters: int = 20, beta0: float = 0.9, decay: float = 0.8,
         return_info: bool = False):
    """Iterative method with adaptive thresholding on every fast-time sweep.

    Flagged samples start at zero; each iteration keeps the range bins above
    ``beta0 * decay**k * max|spectrum|``, transforms back, and refills only
    the flagged samples.  Unflagged samples are returned unchanged.

    With ``return_info`` the result is ``(cube, fully_masked_sweeps)``.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")
    x = _cube(cube)
    m = _mask(mask, x)
    full = np.flatnonzero(m.all(axis=0))
    if full.size:
        warnings.warn(f"sweeps {full.tolist()} fully masked; returned zeroed",
                      FullSweepMaskedWarning, stacklevel=2)
    m3 = np.broadcast_to(m[:, :, None], x.shape)
    out = np.where(m3, 0, x).astype(DTYPE)
    if m.any():
        for k in range(iters):
            spec = dft_axis(out, 0).astype(np.complex128)
            mag = np.abs(spec)
            thr = beta0 * decay**k * mag.max(axis=0, keepdims=True)
            rec = dft_axis(np.where(mag > thr, spec, 0), 0, "inverse")
            out = np.where(m3, rec, x).astype(DTYPE)
    if return_info:
        return out, full.tolist()
    return out

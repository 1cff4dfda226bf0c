"""Transforms between time cubes, range-Doppler maps and range-Doppler-angle maps.

Axis convention for every rank-3 cube is ``[range/fast-time, Doppler/slow-time,
antenna/angle]``.  Doppler and angle axes are fftshifted so that the zero
velocity and boresight bins sit at ``N // 2``.
"""
from __future__ import annotations

import numpy as np

from .tensor import DTYPE, dft_axis, fftshift_axis, ifftshift_axis

RANGE, DOPPLER, ANGLE = 0, 1, 2


def _check_cube(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be rank 3 [N_R, N_D, N_A], got shape {arr.shape}")
    return arr


def _check_shape(arr: np.ndarray, shape) -> None:
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ValueError(f"expected shape {tuple(shape)}, got {arr.shape}")


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (its DFT has exactly three non-zero taps)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def time_to_rd(cube, window: str = "none", shape=None) -> np.ndarray:
    """Range-Doppler maps of every antenna: fast-time DFT, then slow-time DFT."""
    arr = _check_cube(cube, "cube")
    _check_shape(arr, shape)
    if window == "hann_2d":
        w = hann(arr.shape[0])[:, None, None] * hann(arr.shape[1])[None, :, None]
        arr = arr * w
    elif window != "none":
        raise ValueError(f"unknown window {window!r}")
    rd = dft_axis(dft_axis(arr, RANGE), DOPPLER)
    return fftshift_axis(rd, DOPPLER)


def rd_to_time(rd, shape=None) -> np.ndarray:
    """Inverse of ``time_to_rd(window='none')``."""
    arr = _check_cube(rd, "rd")
    _check_shape(arr, shape)
    arr = ifftshift_axis(arr, DOPPLER)
    return dft_axis(dft_axis(arr, DOPPLER, "inverse"), RANGE, "inverse")


def rd_to_rda(rd, shape=None) -> np.ndarray:
    """Unwindowed, non-zero-padded DFT over antennas, angle axis centred."""
    arr = _check_cube(rd, "rd")
    _check_shape(arr, shape)
    return fftshift_axis(dft_axis(arr, ANGLE), ANGLE)


def rda_to_rd(rda, shape=None) -> np.ndarray:
    arr = _check_cube(rda, "rda")
    _check_shape(arr, shape)
    return dft_axis(ifftshift_axis(arr, ANGLE), ANGLE, "inverse")


def time_to_rda(cube) -> np.ndarray:
    return rd_to_rda(time_to_rd(cube))


def rda_to_time(rda) -> np.ndarray:
    return rd_to_time(rda_to_rd(rda))


def spectral_hann(rd) -> np.ndarray:
    """Apply a periodic Hann window to an unwindowed RD map in the frequency domain.

    Multiplying by the periodic Hann window in time is a circular convolution
    with ``[-1/4, 1/2, -1/4]`` along each transformed axis, so this equals
    ``time_to_rd(rd_to_time(rd), window='hann_2d')`` without leaving the
    spectrum.  Works on RD and RDA maps alike (only axes 0 and 1 are touched).
    """
    arr = _check_cube(rd, "map").astype(np.complex128)
    for axis in (RANGE, DOPPLER):
        arr = 0.5 * arr - 0.25 * (np.roll(arr, 1, axis=axis) + np.roll(arr, -1, axis=axis))
    return arr.astype(DTYPE)


def noncoherent_sum(m) -> np.ndarray:
    """Power summed over the last axis: ``out[r, d] = sum |S[r, d, :]|**2``."""
    arr = _check_cube(m, "map")
    return np.sum(np.abs(arr.astype(np.complex128)) ** 2, axis=-1)


def detection_map(rd) -> np.ndarray:
    """Windowed non-coherent power map used on every detection path."""
    return noncoherent_sum(spectral_hann(rd))

"""Complex tensors: axis-wise DFT, circular shifts and the CRT1 file format.

Tensors are plain ``numpy`` arrays of dtype ``complex64`` (row-major, last
axis fastest).  The DFT is computed here with a mixed-radix Cooley-Tukey
recursion that falls back to Bluestein's chirp-z algorithm for large prime
factors; all arithmetic inside the transform runs in complex128.
"""
from __future__ import annotations

import functools
import io
import os
import struct
from typing import BinaryIO, Union

import numpy as np

MAGIC = b"CRT1"
DTYPE = np.complex64

# primes above this length go through Bluestein instead of a dense DFT matrix
_BLUESTEIN_MIN_PRIME = 17

PathOrFile = Union[str, os.PathLike, BinaryIO]


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a complex64 array, raising on non-finite values."""
    arr = np.asarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def _check_axis(ndim: int, axis: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ----------------------------------------------------------------------------
# FFT kernels (operate on the last axis, complex128)


def _smallest_factor(n: int) -> int:
    for p in (4, 2, 3, 5):
        if n % p == 0:
            return p
    f = 7
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@functools.lru_cache(maxsize=None)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


@functools.lru_cache(maxsize=None)
def _twiddles(p: int, m: int) -> np.ndarray:
    r = np.arange(p)[:, None]
    s = np.arange(m)[None, :]
    return np.exp(-2j * np.pi * r * s / (p * m))


@functools.lru_cache(maxsize=None)
def _bluestein_plan(n: int):
    size = 1
    while size < 2 * n - 1:
        size *= 2
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * (k * k % (2 * n)) / n)
    filt = np.zeros(size, dtype=np.complex128)
    filt[:n] = np.conj(chirp)
    filt[size - n + 1:] = np.conj(chirp[1:])[::-1]
    return size, chirp, _fft_last(filt)


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size, chirp, filt_f = _bluestein_plan(n)
    buf = np.zeros(x.shape[:-1] + (size,), dtype=np.complex128)
    buf[..., :n] = x * chirp
    conv = _ifft_last(_fft_last(buf) * filt_f)
    return conv[..., :n] * chirp


def _fft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = _smallest_factor(n)
    if p == n:
        if n >= _BLUESTEIN_MIN_PRIME:
            return _bluestein(x)
        return x @ _dft_matrix(n).T
    m = n // p
    # x[r::p] for r < p, each transformed with length m
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    y = _fft_last(sub) * _twiddles(p, m)
    # combine with a size-p DFT over r; output index q*m + s
    out = np.einsum("qr,...rs->...qs", _dft_matrix(p), y)
    return out.reshape(x.shape)


def _ifft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return np.conj(_fft_last(np.conj(x))) / n


# ----------------------------------------------------------------------------
# public operations


def dft_axis(t, axis: int, direction: str = "forward") -> np.ndarray:
    """1-D DFT along ``axis`` of every lane.

    The forward transform is unnormalised; the inverse carries the ``1/N``
    factor so that ``inverse(forward(x)) == x``.
    """
    arr = np.asarray(t)
    axis = _check_axis(arr.ndim, axis)
    if arr.shape[axis] == 0:
        raise ValueError("cannot transform a zero-length axis")
    if direction not in ("forward", "inverse"):
        raise ValueError(f"unknown direction {direction!r}")
    work = np.moveaxis(arr.astype(np.complex128), axis, -1)
    out = _fft_last(work) if direction == "forward" else _ifft_last(work)
    return np.ascontiguousarray(np.moveaxis(out, -1, axis)).astype(DTYPE)


def circular_shift(t, axis: int, k: int) -> np.ndarray:
    """Move element ``i`` to ``(i + k) mod N`` along ``axis``."""
    arr = np.asarray(t)
    axis = _check_axis(arr.ndim, axis)
    return np.roll(arr, int(k), axis=axis)


def fftshift_axis(t, axis: int) -> np.ndarray:
    arr = np.asarray(t)
    axis = _check_axis(arr.ndim, axis)
    return circular_shift(arr, axis, arr.shape[axis] // 2)


def ifftshift_axis(t, axis: int) -> np.ndarray:
    arr = np.asarray(t)
    axis = _check_axis(arr.ndim, axis)
    return circular_shift(arr, axis, -(arr.shape[axis] // 2))


# ----------------------------------------------------------------------------
# CRT1 binary format


def write_crt1(fp: BinaryIO, t) -> None:
    arr = np.ascontiguousarray(np.asarray(t, dtype=DTYPE))
    if arr.ndim > 255:
        raise ValueError("rank too large for CRT1")
    fp.write(MAGIC)
    fp.write(struct.pack("<B", arr.ndim))
    fp.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fp.write(arr.view(np.float32).astype("<f4", copy=False).tobytes())


def read_crt1(fp: BinaryIO) -> np.ndarray:
    magic = fp.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad CRT1 magic {magic!r}")
    (rank,) = struct.unpack("<B", fp.read(1))
    dims = struct.unpack(f"<{rank}I", fp.read(4 * rank))
    count = int(np.prod(dims, dtype=np.int64)) * 2
    raw = fp.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated CRT1 payload")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    return data.view(DTYPE).reshape(dims)


def save_tensor(path: PathOrFile, t) -> None:
    if hasattr(path, "write"):
        write_crt1(path, t)
        return
    with open(path, "wb") as fp:
        write_crt1(fp, t)


def load_tensor(path: PathOrFile) -> np.ndarray:
    if hasattr(path, "read"):
        return read_crt1(path)
    with open(path, "rb") as fp:
        return read_crt1(fp)


def to_bytes(t) -> bytes:
    buf = io.BytesIO()
    write_crt1(buf, t)
    return buf.getvalue()


def from_bytes(raw: bytes) -> np.ndarray:
    return read_crt1(io.BytesIO(raw))

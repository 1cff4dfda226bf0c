import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radarim import tensor
from radarim.tensor import dft_axis


def _rand(shape, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex64)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 7, 8, 12, 16, 17, 31, 32, 45, 96, 97, 100, 128, 210])
def test_forward_matches_numpy(n):
    x = _rand((3, n), seed=n)
    assert _rel(dft_axis(x, 1), np.fft.fft(x.astype(np.complex128), axis=1)) < 2e-6


@pytest.mark.parametrize("n", [6, 17, 96])
def test_inverse_matches_numpy(n):
    x = _rand((n, 2), seed=n)
    assert _rel(dft_axis(x, 0, "inverse"), np.fft.ifft(x.astype(np.complex128), axis=0)) < 2e-6


def test_length_four_by_hand():
    # X[k] = sum_n x[n] e^{-2 pi i k n / 4}
    x = np.array([1, 2, 3, 4], dtype=np.complex64)
    np.testing.assert_allclose(dft_axis(x, 0), [10, -2 + 2j, -2, -2 - 2j], atol=1e-6)


def test_unit_impulse_gives_flat_spectrum():
    x = np.zeros(96, np.complex64)
    x[0] = 1
    np.testing.assert_allclose(dft_axis(x, 0), np.ones(96), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 130), seed=st.integers(0, 10_000))
def test_roundtrip_and_parseval(n, seed):
    x = _rand((n,), seed)
    y = dft_axis(x, 0)
    back = dft_axis(y, 0, "inverse")
    assert _rel(back, x) <= 1e-6
    e_t = np.sum(np.abs(x.astype(np.complex128)) ** 2)
    e_f = np.sum(np.abs(y.astype(np.complex128)) ** 2) / n
    assert abs(e_f - e_t) / e_t <= 1e-5


def test_other_axes_untouched():
    x = _rand((4, 6, 5))
    y = dft_axis(x, 1)
    np.testing.assert_allclose(y, np.fft.fft(x, axis=1), rtol=1e-5, atol=1e-5)
    assert y.dtype == np.complex64 and y.shape == x.shape


def test_negative_axis():
    x = _rand((4, 6))
    np.testing.assert_allclose(dft_axis(x, -1), dft_axis(x, 1))


@pytest.mark.parametrize("bad", [3, -4])
def test_bad_axis(bad):
    with pytest.raises(ValueError):
        dft_axis(_rand((2, 2, 2)), bad)


def test_zero_length_axis():
    with pytest.raises(ValueError):
        dft_axis(np.zeros((0, 3), np.complex64), 0)


def test_bad_direction():
    with pytest.raises(ValueError):
        dft_axis(_rand((4,)), 0, "sideways")


def test_circular_shift_and_fftshift():
    x = np.arange(6).astype(np.complex64)
    np.testing.assert_array_equal(tensor.circular_shift(x, 0, 2).real, [4, 5, 0, 1, 2, 3])
    np.testing.assert_array_equal(tensor.fftshift_axis(x, 0), np.fft.fftshift(x))
    np.testing.assert_array_equal(tensor.ifftshift_axis(tensor.fftshift_axis(x, 0), 0), x)


def test_shift_theorem():
    # a circular shift multiplies the spectrum by a linear phase
    x = _rand((16,))
    k = 3
    lhs = dft_axis(tensor.circular_shift(x, 0, k), 0)
    ramp = np.exp(-2j * np.pi * k * np.arange(16) / 16)
    np.testing.assert_allclose(lhs, dft_axis(x, 0) * ramp, atol=1e-5)


def test_crt1_roundtrip(tmp_path):
    x = _rand((3, 4, 5))
    p = tmp_path / "x.crt"
    tensor.save_tensor(p, x)
    y = tensor.load_tensor(p)
    assert y.dtype == np.complex64
    np.testing.assert_array_equal(x, y)


def test_crt1_layout():
    x = np.array([[1 + 2j, 3 - 4j]], dtype=np.complex64)
    raw = tensor.to_bytes(x)
    expected = (b"CRT1" + bytes([2]) + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + np.array([1, 2, 3, -4], "<f4").tobytes())
    assert raw == expected
    np.testing.assert_array_equal(tensor.from_bytes(raw), x)


def test_crt1_rejects_bad_magic_and_truncation():
    raw = tensor.to_bytes(_rand((2, 2)))
    with pytest.raises(ValueError):
        tensor.read_crt1(io.BytesIO(b"XXXX" + raw[4:]))
    with pytest.raises(ValueError):
        tensor.read_crt1(io.BytesIO(raw[:-3]))

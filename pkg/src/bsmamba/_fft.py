"""Radix-2 Cooley-Tukey FFT kernels on raw numpy arrays.

These operate on complex arrays and know nothing about autodiff; the
differentiable wrappers live in tensor.py. Only power-of-two lengths are
supported.
"""

import numpy as np

from .errors import UnsupportedSizeError

_BITREV_CACHE: dict[int, np.ndarray] = {}


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _bitrev_indices(n: int) -> np.ndarray:
    idx = _BITREV_CACHE.get(n)
    if idx is None:
        bits = n.bit_length() - 1
        idx = np.zeros(n, dtype=np.int64)
        for i in range(n):
            r = 0
            v = i
            for _ in range(bits):
                r = (r << 1) | (v & 1)
                v >>= 1
            idx[i] = r
        _BITREV_CACHE[n] = idx
    return idx


def fft1d(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT along the last axis (conjugate kernel if inverse)."""
    n = z.shape[-1]
    if not is_power_of_two(n):
        raise UnsupportedSizeError(f"fft length {n} is not a power of two")
    a = np.ascontiguousarray(z[..., _bitrev_indices(n)], dtype=z.dtype)
    sign = 1.0 if inverse else -1.0
    step = 2
    while step <= n:
        half = step // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / step).astype(z.dtype)
        v = a.reshape(-1, n // step, step)
        even = v[..., :half].copy()
        odd = v[..., half:] * tw
        v[..., :half] = even + odd
        v[..., half:] = even - odd
        step *= 2
    return a


def fft2(z: np.ndarray, inverse: bool = False, normalize: bool = False) -> np.ndarray:
    """2-D DFT over the last two axes; normalize divides by H*W."""
    h, w = z.shape[-2], z.shape[-1]
    out = fft1d(z, inverse)
    out = fft1d(out.swapaxes(-1, -2), inverse).swapaxes(-1, -2)
    if normalize:
        out = out / (h * w)
    return out

"""Real-input 2-D FFT built on an iterative radix-2 core with a Bluestein
fallback for arbitrary lengths.

Conventions used throughout the package:

* the forward transform is unnormalized; the inverse carries the full
  1/N (or 1/(H*W)) factor;
* ``rfft2`` keeps only the non-negative-frequency half of the last axis,
  so a real [..., H, W] plane maps to a complex [..., H, W//2 + 1] block;
* ``irfft2`` rebuilds the dropped bins by Hermitian symmetry, applies the
  full inverse transform, and returns its real part.  The imaginary part
  of the inverse is exactly zero for a symmetry-consistent spectrum and
  is discarded otherwise, which is the behavior the spectral layer relies
  on when its unconstrained complex weights break the symmetry.

All transforms are vectorized over leading axes.  Power-of-two lengths run
on the radix-2 path; every other length goes through Bluestein's chirp-z
reduction to a power-of-two convolution, so correctness does not depend on
the factorization of H or W.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_TWIDDLE_CACHE: dict[tuple[int, int], list[np.ndarray]] = {}
_REVERSAL_CACHE: dict[int, np.ndarray] = {}
_CHIRP_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _bit_reversal(n: int) -> np.ndarray:
    cached = _REVERSAL_CACHE.get(n)
    if cached is not None:
        return cached
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx = idx >> 1
    _REVERSAL_CACHE[n] = rev
    return rev


def _stage_twiddles(n: int, sign: int) -> list[np.ndarray]:
    cached = _TWIDDLE_CACHE.get((n, sign))
    if cached is not None:
        return cached
    stages = []
    half = 1
    while half < n:
        stages.append(np.exp(sign * 2j * np.pi * np.arange(half) / (2 * half)))
        half *= 2
    _TWIDDLE_CACHE[(n, sign)] = stages
    return stages


def _dft_pow2(a: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT along the last axis; length must be a power of two."""
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    out = np.ascontiguousarray(a[..., _bit_reversal(n)])
    half = 1
    for tw in _stage_twiddles(n, sign):
        step = 2 * half
        view = out.reshape(out.shape[:-1] + (n // step, step))
        t = view[..., half:] * tw
        view[..., half:] = view[..., :half] - t
        view[..., :half] += t
        half = step
    return out


def _chirps(n: int, sign: int) -> tuple[np.ndarray, np.ndarray]:
    """Chirp e^(sign*i*pi*k^2/n) and its padded, transformed convolution kernel."""
    cached = _CHIRP_CACHE.get((n, sign))
    if cached is not None:
        return cached
    k = np.arange(n)
    # exponents reduced mod 2n keep the angle argument small for precision
    expo = (k * k) % (2 * n)
    chirp = np.exp(sign * 1j * np.pi * expo / n)
    m = 1 << (2 * n - 2).bit_length()
    kernel = np.zeros(m, dtype=np.complex128)
    kernel[:n] = np.conj(chirp)
    kernel[m - n + 1 :] = np.conj(chirp)[1:][::-1]
    f_kernel = _dft_pow2(kernel, -1)
    _CHIRP_CACHE[(n, sign)] = (chirp, f_kernel)
    return chirp, f_kernel


def _dft_bluestein(a: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT along the last axis for arbitrary length."""
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    chirp, f_kernel = _chirps(n, sign)
    m = f_kernel.shape[0]
    padded = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    padded[..., :n] = a * chirp
    conv = _dft_pow2(_dft_pow2(padded, -1) * f_kernel, +1) / m
    return conv[..., :n] * chirp


def dft(x: np.ndarray, axis: int = -1, sign: int = -1) -> np.ndarray:
    """Unnormalized complex DFT along ``axis`` with the given exponent sign.

    sign=-1 is the forward transform, sign=+1 the (unscaled) inverse.
    """
    if sign not in (-1, +1):
        raise ValueError(f"sign must be -1 or +1, got {sign}")
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 0:
        raise ShapeError("dft input must have at least one axis")
    n = x.shape[axis]
    if n == 0:
        raise ShapeError("dft along an empty axis")
    moved = np.moveaxis(x, axis, -1)
    if n & (n - 1) == 0:
        out = _dft_pow2(moved, sign)
    else:
        out = _dft_bluestein(moved, sign)
    return np.moveaxis(out, -1, axis)


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Forward complex DFT along ``axis`` (unnormalized)."""
    return dft(x, axis=axis, sign=-1)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse complex DFT along ``axis``, carrying the 1/N factor."""
    x = np.asarray(x)
    return dft(x, axis=axis, sign=+1) / x.shape[axis]


def half_width(width: int) -> int:
    """Number of non-negative-frequency bins kept for a real axis of ``width``."""
    return width // 2 + 1


def _check_plane(x: np.ndarray, who: str) -> None:
    if x.ndim < 2:
        raise ShapeError(f"{who} expects at least 2 axes, got shape {x.shape}")
    if x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ShapeError(f"{who} on an empty plane: shape {x.shape}")


def rfft2(x: np.ndarray) -> np.ndarray:
    """2-D DFT of a real [..., H, W] array, half-plane layout [..., H, W//2+1]."""
    x = np.asarray(x, dtype=np.float64)
    _check_plane(x, "rfft2")
    wh = half_width(x.shape[-1])
    cols = dft(x.astype(np.complex128), axis=-1, sign=-1)[..., :wh]
    return dft(cols, axis=-2, sign=-1)


def hermitian_extend(spec: np.ndarray, out_width: int) -> np.ndarray:
    """Rebuild the full [..., H, W] spectrum from its half-plane layout.

    The missing columns are filled by the symmetry F(u, W-v) = conj(F(-u, v))
    that holds for transforms of real input.  Stored columns are taken as-is,
    so a symmetry-breaking (filtered) spectrum extends to the unique full
    spectrum whose inverse has the discarded-imaginary-part semantics of
    ``irfft2``.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    _check_plane(spec, "hermitian_extend")
    h, wh = spec.shape[-2], spec.shape[-1]
    if out_width < 1 or half_width(out_width) != wh:
        raise ShapeError(
            f"half-plane width {wh} does not correspond to out_width {out_width}"
        )
    full = np.zeros(spec.shape[:-1] + (out_width,), dtype=np.complex128)
    full[..., :wh] = spec
    if out_width > wh:
        rows = (h - np.arange(h)) % h
        tail = np.arange(wh, out_width)
        src = out_width - tail  # mirrored source columns, all < wh
        full[..., tail] = np.conj(spec[..., rows, :][..., :, src])
    return full


def irfft2(spec: np.ndarray, out_width: int) -> np.ndarray:
    """Inverse of ``rfft2``: [..., H, W//2+1] complex -> [..., H, W] real.

    Applies the 1/(H*W)-normalized inverse transform to the Hermitian
    extension of ``spec`` and returns the real part.
    """
    full = hermitian_extend(spec, out_width)
    y = ifft(ifft(full, axis=-1), axis=-2)
    return np.ascontiguousarray(y.real)

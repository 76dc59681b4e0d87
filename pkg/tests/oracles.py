"""Independent brute-force oracles used by the test suite.

Everything here is written as literal definition-level loops, deliberately
ignoring efficiency, so the fast implementations are checked against code
that shares nothing with them.
"""

from __future__ import annotations

import numpy as np


def dft2_full(x: np.ndarray) -> np.ndarray:
    """Full-plane 2-D DFT of one real or complex [H, W] plane, by definition."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    acc += x[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out


def idft2_full(f: np.ndarray) -> np.ndarray:
    """Normalized inverse of dft2_full, full complex result."""
    h, w = f.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for m in range(h):
        for n in range(w):
            acc = 0.0 + 0.0j
            for u in range(h):
                for v in range(w):
                    acc += f[u, v] * np.exp(2j * np.pi * (u * m / h + v * n / w))
            out[m, n] = acc / (h * w)
    return out


def circular_convolve2d(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Circular (wrap-around) convolution of two [H, W] planes, by definition."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for p in range(h):
                for q in range(w):
                    acc += x[p, q] * k[(i - p) % h, (j - q) % w]
            out[i, j] = acc
    return out


def conv2d_loop(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of [B,H,W,Cin] with [K,K,Cin,Cout], by loops."""
    bs, h, ww, cin = x.shape
    k = w.shape[0]
    cout = w.shape[3]
    ho = (h - k) // stride + 1
    wo = (ww - k) // stride + 1
    out = np.zeros((bs, ho, wo, cout))
    for n in range(bs):
        for i in range(ho):
            for j in range(wo):
                for f in range(cout):
                    acc = 0.0
                    for p in range(k):
                        for q in range(k):
                            for c in range(cin):
                                acc += x[n, i * stride + p, j * stride + q, c] * w[p, q, c, f]
                    out[n, i, j, f] = acc + b[f]
    return out


def matmul_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def contract_channels_loop(x_fft: np.ndarray, w_fft: np.ndarray) -> np.ndarray:
    b, c, h, wh = x_fft.shape
    f = w_fft.shape[1]
    out = np.zeros((b, f, h, wh), dtype=np.complex128)
    for n in range(b):
        for g in range(f):
            for u in range(h):
                for v in range(wh):
                    acc = 0.0 + 0.0j
                    for ch in range(c):
                        acc += x_fft[n, ch, u, v] * w_fft[ch, g, u, v]
                    out[n, g, u, v] = acc
    return out


def finite_difference(f, x: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x.

    coords: optional iterable of flat indices to probe; all indices when None.
    Returns an array shaped like x (unprobed entries are zero).
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    idxs = range(xf.size) if coords is None else coords
    for i in idxs:
        orig = xf[i]
        xf[i] = orig + h
        fp = f(x)
        xf[i] = orig - h
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|, |n|), elementwise, reduced by max."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))

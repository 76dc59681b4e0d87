"""Small dense-array operations shared by the layer implementations.

Arrays are plain numpy ndarrays (float64 for activations, complex128 for
spectra); everything here is a thin, shape-checked wrapper over numpy
kernels so the rest of the package can state its contracts in one place.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a [B, K] logit matrix, max-shifted for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"softmax expects [batch, classes], got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"log_softmax expects [batch, classes], got {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def contract_channels(x_fft: np.ndarray, w_fft: np.ndarray) -> np.ndarray:
    """Per-frequency channel mixing: [B,C,H,Wh] x [C,F,H,Wh] -> [B,F,H,Wh].

    Every frequency bin (h, w) carries its own CxF complex mixing matrix;
    output bin (b, f, h, w) = sum_c x_fft[b,c,h,w] * w_fft[c,f,h,w].
    """
    x_fft = np.asarray(x_fft, dtype=np.complex128)
    w_fft = np.asarray(w_fft, dtype=np.complex128)
    if x_fft.ndim != 4 or w_fft.ndim != 4:
        raise ShapeError(
            f"contract_channels expects 4-D inputs, got {x_fft.shape} and {w_fft.shape}"
        )
    if x_fft.shape[1] != w_fft.shape[0] or x_fft.shape[2:] != w_fft.shape[2:]:
        raise ShapeError(
            f"contract_channels shape mismatch: {x_fft.shape} vs {w_fft.shape}"
        )
    return np.einsum("bchw,cfhw->bfhw", x_fft, w_fft)

"""Learnable frequency-domain filter layer.

The layer transposes [B, H, W, Cin] input to channels-first, takes the
half-plane 2-D FFT of every channel, multiplies by a complex filter bank
(independently trainable real and imaginary tensors of shape
[Cin, Cout, H, W//2+1]) while summing over input channels, inverts the
transform, transposes back, and adds a per-channel spatial bias.  With the
filter set to the transform of a spatial kernel this is exactly circular
convolution; with unconstrained weights every output pixel is a weighted
sum of every input pixel, so the receptive field is global at depth one.

Backward pass: for a real loss L and half-plane activations Z, gradients
are carried as G = dL/dRe(Z) + j * dL/dIm(Z).  The inverse transform's
adjoint is the forward transform scaled by s(v)/(H*W), where s(v) is 1 on
self-conjugate columns (v = 0, and v = W/2 for even W) and 2 elsewhere,
because those columns are counted once in the Hermitian extension and the
rest twice.  The complex product's adjoint multiplies by conjugates, and
the forward transform's adjoint w.r.t. real input is the real part of the
sign-flipped transform of the zero-extended gradient.
"""

from __future__ import annotations

import numpy as np

from . import fft
from .errors import ConfigError, ShapeError
from .layers import Layer
from .ops import contract_channels

INIT_SCHEMES = ("spatial-equivalent", "direct", "annular")


def filter_from_spatial_kernels(
    kernels: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Half-plane filters [Cin,Cout,H,Wh] realizing circular convolution
    with the given [Cin,Cout,K,K] spatial kernels (embedded at the origin)."""
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 4:
        raise ShapeError(f"expected [Cin,Cout,K,K] kernels, got {kernels.shape}")
    k = kernels.shape[2]
    if k > height or kernels.shape[3] > width:
        raise ShapeError(f"kernel {kernels.shape[2:]} exceeds plane {height}x{width}")
    padded = np.zeros(kernels.shape[:2] + (height, width))
    padded[:, :, :k, : kernels.shape[3]] = kernels
    return fft.rfft2(padded)


def init_spectral_weights(
    cin: int,
    cout: int,
    height: int,
    width: int,
    rng: np.random.Generator,
    scheme: str = "spatial-equivalent",
    kernel: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (W_real, W_imag) of shape [Cin, Cout, H, W//2+1].

    "spatial-equivalent" transforms He-initialized KxK kernels, so the layer
    starts as a bank of ordinary small circular convolutions (compact,
    low-variance start); "direct" draws i.i.d. complex Gaussians with
    E|W|^2 = 1/Cin, which keeps unit-variance activations unit-variance
    and makes the weight dense across the whole spectrum; "annular" gives
    each output channel a narrow real radial bandpass, radii tiling the
    half plane from 1 to min(H,W)/2, so channel activations index ring
    energy from step 0 instead of having to discover radial structure by
    gradient descent.  Every annular filter is scaled to unit gain on
    white input, which keeps channel variances comparable before the
    first normalization.
    """
    if min(cin, cout, height, width) < 1:
        raise ConfigError("all spectral filter dimensions must be positive")
    if scheme == "spatial-equivalent":
        k = min(kernel, height, width)
        std = np.sqrt(2.0 / (k * k * cin))
        kernels = rng.normal(0.0, std, size=(cin, cout, k, k))
        filt = filter_from_spatial_kernels(kernels, height, width)
        return np.ascontiguousarray(filt.real), np.ascontiguousarray(filt.imag)
    if scheme == "direct":
        shape = (cin, cout, height, fft.half_width(width))
        std = np.sqrt(1.0 / (2.0 * cin))
        return rng.normal(0.0, std, size=shape), rng.normal(0.0, std, size=shape)
    if scheme == "annular":
        wh = fft.half_width(width)
        rows = np.minimum(np.arange(height), height - np.arange(height))
        radius = np.hypot(rows[:, None], np.arange(wh)[None, :])
        radii = np.linspace(1.0, min(height, width) / 2.0, cout)
        sigma = max(0.5, radii[1] - radii[0]) if cout > 1 else 1.0
        rings = np.exp(-((radius[None] - radii[:, None, None]) ** 2) / (2 * sigma**2))
        dup = np.full(wh, 2.0)  # Hermitian double count off the self-conjugate columns
        dup[0] = 1.0
        if width % 2 == 0:
            dup[-1] = 1.0
        gain = np.sqrt(np.sum(rings**2 * dup, axis=(1, 2)) / (height * width))
        rings /= gain[:, None, None] * np.sqrt(cin)
        w_real = np.broadcast_to(rings, (cin, cout, height, wh)).copy()
        return np.ascontiguousarray(w_real), np.zeros_like(w_real)
    raise ConfigError(f"unknown spectral init scheme {scheme!r}")


class SpectralFilter(Layer):
    """Frequency-domain channel-mixing filter bound to one input resolution."""

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        height: int,
        width: int,
        init_scheme: str = "spatial-equivalent",
    ):
        super().__init__(name)
        if init_scheme not in INIT_SCHEMES:
            raise ConfigError(f"{name}: unknown init scheme {init_scheme!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.height = height
        self.width = width
        self.init_scheme = init_scheme
        wh = fft.half_width(width)
        self.params = {
            "w_real": np.zeros((in_channels, out_channels, height, wh)),
            "w_imag": np.zeros((in_channels, out_channels, height, wh)),
            "b": np.zeros(out_channels),
        }

    def init_params(self, rng: np.random.Generator) -> None:
        w_real, w_imag = init_spectral_weights(
            self.in_channels,
            self.out_channels,
            self.height,
            self.width,
            rng,
            scheme=self.init_scheme,
        )
        self.params["w_real"] = w_real
        self.params["w_imag"] = w_imag
        self.params["b"] = np.zeros(self.out_channels)

    def _inverse_scale(self) -> np.ndarray:
        """Adjoint column weights s(v)/(H*W) on the half plane."""
        wh = fft.half_width(self.width)
        s = np.full(wh, 2.0)
        s[0] = 1.0
        if self.width % 2 == 0:
            s[-1] = 1.0
        return s / (self.height * self.width)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected [B,H,W,{self.in_channels}], got {x.shape}"
            )
        if x.shape[1] != self.height or x.shape[2] != self.width:
            raise ShapeError(
                f"{self.name}: layer is bound to {self.height}x{self.width} input, "
                f"got {x.shape[1]}x{x.shape[2]}"
            )
        x_cf = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        x_fft = fft.rfft2(x_cf)
        w_fft = self.params["w_real"] + 1j * self.params["w_imag"]
        y_fft = contract_channels(x_fft, w_fft)
        y_cf = fft.irfft2(y_fft, self.width)
        self._cache = (x_fft, w_fft)
        return y_cf.transpose(0, 2, 3, 1) + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_fft, w_fft = self._take_cache()
        self.grads["b"] = dout.sum(axis=(0, 1, 2))
        d_y_cf = dout.transpose(0, 3, 1, 2)
        # adjoint of irfft2: forward transform of the upstream, column-scaled
        g_y_fft = fft.rfft2(d_y_cf) * self._inverse_scale()
        g_w = np.einsum("bchw,bfhw->cfhw", np.conj(x_fft), g_y_fft)
        self.grads["w_real"] = np.ascontiguousarray(g_w.real)
        self.grads["w_imag"] = np.ascontiguousarray(g_w.imag)
        g_x_fft = np.einsum("cfhw,bfhw->bchw", np.conj(w_fft), g_y_fft)
        # adjoint of rfft2 w.r.t. its real input: zero-extend the half plane,
        # apply the unnormalized sign-flipped transform, keep the real part
        padded = np.zeros(g_x_fft.shape[:-1] + (self.width,), dtype=np.complex128)
        padded[..., : g_x_fft.shape[-1]] = g_x_fft
        d_x_cf = fft.dft(fft.dft(padded, axis=-1, sign=+1), axis=-2, sign=+1).real
        return np.ascontiguousarray(d_x_cf.transpose(0, 2, 3, 1))

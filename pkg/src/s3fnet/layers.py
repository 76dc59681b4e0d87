"""Spatial-domain differentiable layers with closed-form backward passes.

Every layer is a small stateful object: ``forward`` caches what the matching
``backward`` needs, ``backward`` consumes the cache, returns the input
gradient, and deposits parameter gradients in ``layer.grads``.  Composite
layers expose their children through ``children()`` so models can flatten
qualified parameter names.

Conventions:
* activations are [B, H, W, C] float64 (channels-last);
* convolution is cross-correlation (no kernel flip);
* same-padding splits an odd overhang with the extra row/column on the
  bottom/right edge.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .ops import relu as _relu


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Deterministic per-label RNG stream derived from one master seed."""
    return np.random.default_rng([seed, zlib.crc32(label.encode("utf-8"))])


def same_padding(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    """(before, after) padding so output extent is ceil(extent / stride)."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


def _im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Patch view [B, Ho, Wo, K, K, C] of a padded [B, H, W, C] array."""
    b, h, w, c = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    sb, sh, sw, sc = x.strides
    shape = (b, ho, wo, kernel, kernel, c)
    strides = (sb, sh * stride, sw * stride, sh, sw, sc)
    return np.lib.stride_tricks.as_strided(x, shape, strides, writeable=False)


class Layer:
    """Base class: named parameters, gradients, and a one-shot forward cache."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.non_trainable: set[str] = set()
        self._cache = None

    def children(self) -> list["Layer"]:
        return []

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def set_rng_key(self, key: int) -> None:
        pass

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called without a forward cache")
        cache, self._cache = self._cache, None
        return cache


class Conv2d(Layer):
    """KxK cross-correlation over [B, H, W, Cin] via im2col + matmul."""

    def __init__(
        self,
        name: str,
        kernel: int,
        in_channels: int,
        out_channels: int,
        stride: int = 1,
        padding: str = "same",
        bias: bool = True,
    ):
        super().__init__(name)
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"{name}: kernel must be odd and positive, got {kernel}")
        if padding not in ("same", "valid"):
            raise ConfigError(f"{name}: padding must be 'same' or 'valid'")
        if stride < 1:
            raise ConfigError(f"{name}: stride must be >= 1")
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.padding = padding
        self.use_bias = bias
        self.params = {"w": np.zeros((kernel, kernel, in_channels, out_channels))}
        if bias:
            self.params["b"] = np.zeros(out_channels)

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.kernel * self.kernel * self.in_channels
        self.params["w"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), size=self.params["w"].shape
        )
        if self.use_bias:
            self.params["b"] = np.zeros(self.out_channels)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected [B,H,W,{self.in_channels}], got {x.shape}"
            )
        k, s = self.kernel, self.stride
        if self.padding == "same":
            pt, pb = same_padding(x.shape[1], k, s)
            pl, pr = same_padding(x.shape[2], k, s)
        else:
            pt = pb = pl = pr = 0
            if x.shape[1] < k or x.shape[2] < k:
                raise ShapeError(f"{self.name}: input smaller than kernel")
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        patches = _im2col(xp, k, s)
        b, ho, wo = patches.shape[:3]
        cols = patches.reshape(b * ho * wo, k * k * self.in_channels)
        out = cols @ self.params["w"].reshape(-1, self.out_channels)
        if self.use_bias:
            out += self.params["b"]
        self._cache = (cols, x.shape, xp.shape, (pt, pl), (ho, wo))
        return out.reshape(b, ho, wo, self.out_channels)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        cols, x_shape, xp_shape, (pt, pl), (ho, wo) = self._take_cache()
        k, s = self.kernel, self.stride
        b = x_shape[0]
        flat = dout.reshape(b * ho * wo, self.out_channels)
        self.grads["w"] = (cols.T @ flat).reshape(self.params["w"].shape)
        if self.use_bias:
            self.grads["b"] = flat.sum(axis=0)
        # input grad: full correlation of the (dilated) upstream with the
        # spatially flipped kernel, in/out channels swapped
        dd = dout
        if s > 1:
            dd = np.zeros(
                (b, (ho - 1) * s + 1, (wo - 1) * s + 1, self.out_channels)
            )
            dd[:, ::s, ::s] = dout
        ddp = np.pad(dd, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
        wf = self.params["w"][::-1, ::-1].transpose(0, 1, 3, 2)
        patches = _im2col(ddp, k, 1)
        hb, hc, wc = patches.shape[:3]
        core = patches.reshape(hb * hc * wc, -1) @ wf.reshape(-1, self.in_channels)
        dxp = np.zeros(xp_shape)
        dxp[:, :hc, :wc, :] = core.reshape(hb, hc, wc, self.in_channels)
        return dxp[:, pt : pt + x_shape[1], pl : pl + x_shape[2], :]


class DepthwiseConv2d(Layer):
    """Per-channel KxK cross-correlation, stride 1, same padding, no bias."""

    def __init__(self, name: str, kernel: int, channels: int):
        super().__init__(name)
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"{name}: kernel must be odd and positive, got {kernel}")
        self.kernel = kernel
        self.channels = channels
        self.params = {"w": np.zeros((kernel, kernel, channels))}

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.kernel * self.kernel
        self.params["w"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), size=self.params["w"].shape
        )

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ShapeError(
                f"{self.name}: expected [B,H,W,{self.channels}], got {x.shape}"
            )
        k = self.kernel
        h, w = x.shape[1], x.shape[2]
        pt, pb = same_padding(h, k, 1)
        pl, pr = same_padding(w, k, 1)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        wgt = self.params["w"]
        out = np.zeros_like(x)
        for p in range(k):
            for q in range(k):
                out += xp[:, p : p + h, q : q + w, :] * wgt[p, q]
        self._cache = (xp, x.shape, (pt, pl))
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xp, x_shape, (pt, pl) = self._take_cache()
        k = self.kernel
        h, w = x_shape[1], x_shape[2]
        wgt = self.params["w"]
        dw = np.zeros_like(wgt)
        dxp = np.zeros_like(xp)
        for p in range(k):
            for q in range(k):
                window = xp[:, p : p + h, q : q + w, :]
                dw[p, q] = np.sum(window * dout, axis=(0, 1, 2))
                dxp[:, p : p + h, q : q + w, :] += dout * wgt[p, q]
        self.grads["w"] = dw
        return dxp[:, pt : pt + h, pl : pl + w, :]


class BatchNorm(Layer):
    """Per-channel batch normalization over [B, H, W, C].

    Train mode normalizes by biased batch statistics and updates running
    stats as new = momentum * old + (1 - momentum) * batch; inference uses
    the running statistics.  Running stats live in ``params`` (so they are
    checkpointed) but are excluded from optimizer updates.
    """

    def __init__(self, name: str, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__(name)
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params = {
            "scale": np.ones(channels),
            "shift": np.zeros(channels),
            "running_mean": np.zeros(channels),
            "running_var": np.ones(channels),
        }
        self.non_trainable = {"running_mean", "running_var"}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ShapeError(
                f"{self.name}: expected [B,H,W,{self.channels}], got {x.shape}"
            )
        if train:
            if x.shape[0] < 2:
                raise StateError(
                    f"{self.name}: train-mode batch norm needs batch >= 2, got {x.shape[0]}"
                )
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            m = self.momentum
            self.params["running_mean"] = m * self.params["running_mean"] + (1 - m) * mean
            self.params["running_var"] = m * self.params["running_var"] + (1 - m) * var
        else:
            mean = self.params["running_mean"]
            var = self.params["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train, x.shape)
        return xhat * self.params["scale"] + self.params["shift"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std, train, x_shape = self._take_cache()
        self.grads["scale"] = np.sum(dout * xhat, axis=(0, 1, 2))
        self.grads["shift"] = np.sum(dout, axis=(0, 1, 2))
        dxhat = dout * self.params["scale"]
        if not train:
            return dxhat * inv_std
        m = x_shape[0] * x_shape[1] * x_shape[2]
        # closed form folding the mean/variance paths together
        sum_dxhat = np.sum(dxhat, axis=(0, 1, 2))
        sum_dxhat_xhat = np.sum(dxhat * xhat, axis=(0, 1, 2))
        return (inv_std / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)


class MaxPool2d(Layer):
    """Non-overlapping window max pool (stride == window)."""

    def __init__(self, name: str, window: int = 2):
        super().__init__(name)
        if window < 1:
            raise ConfigError(f"{name}: window must be >= 1")
        self.window = window

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected [B,H,W,C], got {x.shape}")
        v = self.window
        b, h, w, c = x.shape
        if h % v or w % v:
            raise ShapeError(
                f"{self.name}: spatial dims {h}x{w} not divisible by window {v}"
            )
        tiles = (
            x.reshape(b, h // v, v, w // v, v, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, h // v, w // v, c, v * v)
        )
        idx = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        idx, x_shape = self._take_cache()
        v = self.window
        b, h, w, c = x_shape
        dtiles = np.zeros((b, h // v, w // v, c, v * v))
        np.put_along_axis(dtiles, idx[..., None], dout[..., None], axis=-1)
        return (
            dtiles.reshape(b, h // v, w // v, c, v, v)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, h, w, c)
        )


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._cache = x > 0
        return _relu(x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._take_cache()


class Dense(Layer):
    def __init__(self, name: str, in_features: int, out_features: int):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "w": np.zeros((in_features, out_features)),
            "b": np.zeros(out_features),
        }

    def init_params(self, rng: np.random.Generator) -> None:
        self.params["w"] = rng.normal(
            0.0, np.sqrt(2.0 / self.in_features), size=self.params["w"].shape
        )
        self.params["b"] = np.zeros(self.out_features)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.name}: expected [B,{self.in_features}], got {x.shape}"
            )
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        self.grads["w"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"].T


class Dropout(Layer):
    """Inverted dropout with a counter-based mask RNG.

    The mask stream is Philox keyed by (master seed, layer name) with the
    per-layer step count as the counter, so a fixed seed reproduces the
    exact mask sequence regardless of what other layers draw.
    """

    def __init__(self, name: str, rate: float):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"{name}: dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.step = 0
        self._key = zlib.crc32(name.encode("utf-8"))

    def set_rng_key(self, key: int) -> None:
        self._key = (int(key) << 32) ^ zlib.crc32(self.name.encode("utf-8"))
        self.step = 0

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._cache = (None, 1.0)
            return x
        rng = np.random.Generator(np.random.Philox(key=self._key, counter=self.step))
        self.step += 1
        keep = rng.random(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        self._cache = (keep, scale)
        return x * keep * scale

    def backward(self, dout: np.ndarray) -> np.ndarray:
        keep, scale = self._take_cache()
        if keep is None:
            return dout
        return dout * keep * scale


class GlobalAvgPool(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected [B,H,W,C], got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, h, w, c = self._take_cache()
        return np.broadcast_to(dout[:, None, None, :], (b, h, w, c)) / (h * w)


class Flatten(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._take_cache())


class DepthwiseSeparableBlock(Layer):
    """DepthwiseConv -> BN -> ReLU -> PointwiseConv -> BN -> ReLU.

    The two convolutions carry no bias (the norm shifts play that role);
    `use_norm=False` drops both norms, leaving the bare conv/ReLU chain.
    """

    def __init__(
        self,
        name: str,
        kernel: int,
        in_channels: int,
        out_channels: int,
        use_norm: bool = True,
    ):
        super().__init__(name)
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.use_norm = use_norm
        self.depthwise = DepthwiseConv2d(f"{name}.dw", kernel, in_channels)
        self.pointwise = Conv2d(
            f"{name}.pw", 1, in_channels, out_channels, padding="same", bias=False
        )
        chain: list[Layer] = [self.depthwise]
        if use_norm:
            chain.append(BatchNorm(f"{name}.bn1", in_channels))
        chain.append(ReLU(f"{name}.relu1"))
        chain.append(self.pointwise)
        if use_norm:
            chain.append(BatchNorm(f"{name}.bn2", out_channels))
        chain.append(ReLU(f"{name}.relu2"))
        self._chain = chain

    def children(self) -> list[Layer]:
        return list(self._chain)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self._chain:
            x = layer.forward(x, train)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self._chain):
            dout = layer.backward(dout)
        return dout


def iter_layers(layers) -> list[Layer]:
    """Flatten composites into the leaf layers that actually own parameters."""
    flat: list[Layer] = []
    for layer in layers:
        kids = layer.children()
        if kids:
            flat.extend(iter_layers(kids))
        else:
            flat.append(layer)
    return flat

"""Vector-level fusion heads: concatenation and bilinear outer-product
pooling with signed-sqrt + L2 normalization.

These are pure functions returning (output, cache) pairs with matching
backward functions, so the model wires them between tower outputs and the
dense head without another Layer subclass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

L2_EPS = 1e-12


@dataclass(frozen=True)
class FusionKind:
    """Which fusion head to use; `normalize` only affects the bilinear path."""

    kind: str  # "concat" | "bilinear"
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ("concat", "bilinear"):
            raise ConfigError(f"unknown fusion kind {self.kind!r}")

    def output_dim(self, d_s: int, d_f: int) -> int:
        return d_s + d_f if self.kind == "concat" else d_s * d_f

    def to_dict(self) -> dict:
        return {"kind": self.kind, "normalize": self.normalize}

    @staticmethod
    def from_dict(d: dict) -> "FusionKind":
        return FusionKind(kind=d["kind"], normalize=bool(d.get("normalize", True)))


def _check_batch(v_s: np.ndarray, v_f: np.ndarray) -> None:
    if v_s.ndim != 2 or v_f.ndim != 2:
        raise ShapeError(f"fusion expects [B,d] vectors, got {v_s.shape}, {v_f.shape}")
    if v_s.shape[0] != v_f.shape[0]:
        raise ShapeError(f"batch mismatch: {v_s.shape[0]} vs {v_f.shape[0]}")


def concat_fuse(v_s: np.ndarray, v_f: np.ndarray) -> tuple[np.ndarray, tuple]:
    """[B, d_s] and [B, d_f] -> [B, d_s + d_f], spatial segment first."""
    _check_batch(v_s, v_f)
    return np.concatenate([v_s, v_f], axis=1), (v_s.shape[1],)


def concat_backward(dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray]:
    (d_s,) = cache
    return dout[:, :d_s], dout[:, d_s:]


def signed_sqrt_l2(z: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Elementwise sign(z)*sqrt(|z|), then L2-normalize each row.

    A zero row maps to a zero row; the epsilon in the denominator only
    guards that case and costs < 1e-10 in norm for ordinary inputs.
    """
    z = np.asarray(z, dtype=np.float64)
    s = np.sign(z) * np.sqrt(np.abs(z))
    norm = np.linalg.norm(s, axis=1, keepdims=True)
    out = s / (norm + L2_EPS)
    return out, (z, s, norm)


def signed_sqrt_l2_backward(dout: np.ndarray, cache: tuple) -> np.ndarray:
    z, s, norm = cache
    denom = norm + L2_EPS
    # through the normalization: d/ds of s/|s| pattern, row-wise
    dot = np.sum(dout * s, axis=1, keepdims=True)
    safe_norm = np.where(norm > 0.0, norm, 1.0)
    ds = dout / denom - s * dot / (denom * denom * safe_norm)
    ds = np.where(norm > 0.0, ds, 0.0)
    # through the signed sqrt: derivative 1/(2*sqrt(|z|)), subgradient 0 at 0
    with np.errstate(divide="ignore"):
        slope = np.where(z != 0.0, 0.5 / np.sqrt(np.abs(z)), 0.0)
    return ds * slope


def bilinear_fuse(
    v_s: np.ndarray, v_f: np.ndarray, normalize: bool = True
) -> tuple[np.ndarray, tuple]:
    """Row-major flattened outer product [B, d_s*d_f]; index k = i*d_f + j.

    With `normalize`, applies signed-sqrt + L2 to each row.
    """
    _check_batch(v_s, v_f)
    if v_s.shape[1] < 1 or v_f.shape[1] < 1:
        raise ShapeError("bilinear fusion needs d_s >= 1 and d_f >= 1")
    outer = v_s[:, :, None] * v_f[:, None, :]
    flat = outer.reshape(v_s.shape[0], -1)
    if not normalize:
        return flat, (v_s, v_f, None)
    out, norm_cache = signed_sqrt_l2(flat)
    return out, (v_s, v_f, norm_cache)


def bilinear_backward(
    dout: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray]:
    v_s, v_f, norm_cache = cache
    if norm_cache is not None:
        dout = signed_sqrt_l2_backward(dout, norm_cache)
    dp = dout.reshape(v_s.shape[0], v_s.shape[1], v_f.shape[1])
    dv_s = np.einsum("bij,bj->bi", dp, v_f)
    dv_f = np.einsum("bij,bi->bj", dp, v_s)
    return dv_s, dv_f


def fuse(
    fusion: FusionKind, v_s: np.ndarray, v_f: np.ndarray
) -> tuple[np.ndarray, tuple]:
    if fusion.kind == "concat":
        return concat_fuse(v_s, v_f)
    return bilinear_fuse(v_s, v_f, normalize=fusion.normalize)


def fuse_backward(
    fusion: FusionKind, dout: np.ndarray, cache: tuple
) -> tuple[np.ndarray, np.ndarray]:
    if fusion.kind == "concat":
        return concat_backward(dout, cache)
    return bilinear_backward(dout, cache)

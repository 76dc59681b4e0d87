"""Architecture analysis: symbolic and empirical receptive fields, parameter
and multiply-accumulate accounting, and branch-contribution reporting for
fused models.

Receptive-field convention: RF_l = RF_{l-1} + (k_l - 1) * S_{l-1} with S the
product of preceding strides.  Pooling advances the cumulative stride but
contributes no kernel growth (it summarizes already-covered positions); this
is what yields the 5/13/37/85/181 progression for the VGG16 conv stack.  A
spectral filter layer jumps the receptive field to the full input extent.

The empirical verifier backpropagates a one-hot output seed and thresholds
|d out / d in|.  For conv-only stacks whose kernels are at least as large as
their strides the mask is a solid window matching the symbolic value
exactly; sub-kernel strides dilate the mask (the symbolic value is then its
bounding-box span), and max pooling routes gradient only through argmax
winners, making the mask a subset of the covered window.

Cost model: one complex multiply-accumulate counts as 4 real MACs, and each
FFT/inverse pass is costed at c_fft * H*W*log2(H*W) per channel with
c_fft = 5, a standard split-radix style constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import log2

import numpy as np

from .errors import ConfigError
from .layers import Layer, iter_layers, rng_for
from .models import LayerNode, Model, NetworkSpec, _make_layer, trace_shapes

C_FFT = 5

# node kinds that leave the receptive field untouched
_RF_NEUTRAL = ("batchnorm", "relu", "dropout")
_RF_TERMINAL = ("gap", "flatten", "dense")


@dataclass
class RFEntry:
    name: str
    kind: str
    kernel: int
    stride: int  # cumulative stride S_l after this layer
    rf: tuple[int, int]  # receptive field (rows, cols)


@dataclass
class RFReport:
    input_shape: tuple[int, int]
    entries: list[RFEntry]

    @property
    def final_rf(self) -> tuple[int, int]:
        return self.entries[-1].rf if self.entries else (1, 1)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "kernel": e.kernel,
                    "cumulative_stride": e.stride,
                    "rf": list(e.rf),
                }
                for e in self.entries
            ],
            "final_rf": list(self.final_rf),
        }


def receptive_field(nodes: list[LayerNode], input_shape) -> RFReport:
    """Symbolic receptive field through a conv/pool/spectral stack.  The
    stack ends at the first dense/flatten/gap node; unknown kinds fail."""
    h, w = int(input_shape[0]), int(input_shape[1])
    rf_h, rf_w = 1, 1
    stride = 1
    entries = [RFEntry(name="input", kind="input", kernel=1, stride=1, rf=(1, 1))]
    for i, node in enumerate(nodes):
        name = f"{i:02d}.{node.kind}"
        if node.kind in _RF_TERMINAL:
            break
        if node.kind in _RF_NEUTRAL:
            continue
        if node.kind == "conv":
            k, s = node.kernel, node.stride or 1
            rf_h += (k - 1) * stride
            rf_w += (k - 1) * stride
            stride *= s
        elif node.kind == "dwsep":
            # depthwise stage carries the kernel; pointwise adds nothing
            k, s = node.kernel or 3, 1
            rf_h += (k - 1) * stride
            rf_w += (k - 1) * stride
        elif node.kind == "maxpool":
            k = node.window or 2
            stride *= k
        elif node.kind == "spectral":
            rf_h, rf_w = h, w
            k = None
        else:
            raise ConfigError(f"receptive field undefined for layer kind {node.kind!r}")
        entries.append(
            RFEntry(name=name, kind=node.kind, kernel=k or 0, stride=stride, rf=(rf_h, rf_w))
        )
    return RFReport(input_shape=(h, w), entries=entries)


def model_rf_reports(spec: NetworkSpec) -> dict[str, RFReport]:
    """One report per non-empty tower."""
    out = {}
    if spec.spatial:
        out["spatial"] = receptive_field(spec.spatial, spec.input_shape)
    if spec.spectral:
        out["spectral"] = receptive_field(spec.spectral, spec.input_shape)
    return out


def vgg16_conv_stack(channels: int = 3) -> list[LayerNode]:
    """The 13-conv/5-pool VGG16 feature stack (channel widths included only
    for completeness; they do not affect the receptive field)."""
    widths = [64, 128, 256, 512, 512]
    convs_per_block = [2, 2, 3, 3, 3]
    nodes = []
    prev = channels
    for width, reps in zip(widths, convs_per_block):
        for _ in range(reps):
            nodes.append(LayerNode("conv", kernel=3, stride=1, in_channels=prev, out_channels=width))
            prev = width
        nodes.append(LayerNode("maxpool", window=2))
    return nodes


# ---- empirical receptive field --------------------------------------------


def empirical_rf(
    layers: list[Layer],
    input_shape,
    out_pixel: tuple[int, int],
    out_channel: int = 0,
    threshold: float = 1e-12,
    seed: int = 0,
) -> np.ndarray:
    """Boolean [H,W] mask of input pixels with |gradient| above threshold at
    the given output pixel, measured on one random input."""
    h, w = int(input_shape[0]), int(input_shape[1])
    c = int(input_shape[2]) if len(input_shape) > 2 else 1
    x = np.random.default_rng(seed).normal(size=(1, h, w, c))
    y = x
    for layer in layers:
        y = layer.forward(y, False)
    if y.ndim != 4:
        raise ConfigError(f"stack output must stay spatial, got shape {y.shape}")
    oy, ox = out_pixel
    _, yh, yw, yc = y.shape
    if not (0 <= oy < yh and 0 <= ox < yw):
        raise ConfigError(f"out_pixel {out_pixel} outside output extent {yh}x{yw}")
    if not 0 <= out_channel < yc:
        raise ConfigError(f"out_channel {out_channel} outside {yc} channels")
    upstream = np.zeros_like(y)
    upstream[0, oy, ox, out_channel] = 1.0
    d = upstream
    for layer in reversed(layers):
        d = layer.backward(d)
    return np.max(np.abs(d), axis=(0, 3)) > threshold


def layers_from_nodes(nodes: list[LayerNode], seed: int = 0) -> list[Layer]:
    """Instantiate and initialize a standalone layer stack from nodes."""
    layers = [_make_layer(n, f"stack.{i:02d}.{n.kind}") for i, n in enumerate(nodes)]
    for leaf in iter_layers(layers):
        leaf.init_params(rng_for(seed, leaf.name))
        leaf.set_rng_key(seed)
    return layers


# ---- parameter and MAC accounting ------------------------------------------


def _node_params(node: LayerNode) -> tuple[int, int]:
    """(total stored params, trainable params) for one node."""
    if node.kind == "conv":
        n = node.kernel**2 * node.in_channels * node.out_channels + node.out_channels
        return n, n
    if node.kind == "dwsep":
        k = node.kernel or 3
        n = k * k * node.in_channels + node.in_channels * node.out_channels
        use_norm = True if node.use_norm is None else node.use_norm
        if use_norm:
            trainable = n + 2 * node.in_channels + 2 * node.out_channels
            total = trainable + 2 * node.in_channels + 2 * node.out_channels
            return total, trainable
        return n, n
    if node.kind == "batchnorm":
        return 4 * node.out_channels, 2 * node.out_channels
    if node.kind == "spectral":
        wh = node.width // 2 + 1
        n = 2 * node.in_channels * node.out_channels * node.height * wh + node.out_channels
        return n, n
    if node.kind == "dense":
        n = node.in_features * node.units + node.units
        return n, n
    return 0, 0


def _node_macs(node: LayerNode, in_shape, out_shape) -> int:
    if node.kind == "conv":
        ho, wo, _ = out_shape
        return node.kernel**2 * ho * wo * node.in_channels * node.out_channels
    if node.kind == "dwsep":
        h, w, _ = out_shape
        k = node.kernel or 3
        return (k * k * node.in_channels + node.in_channels * node.out_channels) * h * w
    if node.kind == "spectral":
        h, w = node.height, node.width
        wh = w // 2 + 1
        filter_macs = 4 * node.in_channels * node.out_channels * h * wh
        fft_macs = C_FFT * (node.in_channels + node.out_channels) * h * w * log2(h * w)
        return int(round(filter_macs + fft_macs))
    if node.kind == "batchnorm":
        return int(np.prod(in_shape))
    if node.kind == "dense":
        return node.in_features * node.units
    return 0


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    trainable_params: int
    macs: int


@dataclass
class CostTable:
    rows: list[CostRow]
    total_params: int
    total_trainable: int
    total_macs: int

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "name": r.name,
                    "kind": r.kind,
                    "params": r.params,
                    "trainable_params": r.trainable_params,
                    "macs": r.macs,
                }
                for r in self.rows
            ],
            "total_params": self.total_params,
            "total_trainable": self.total_trainable,
            "total_macs": self.total_macs,
        }

    def csv_rows(self) -> list[list]:
        header = ["name", "kind", "params", "trainable_params", "macs"]
        body = [
            [r.name, r.kind, r.params, r.trainable_params, r.macs] for r in self.rows
        ]
        body.append(["total", "", self.total_params, self.total_trainable, self.total_macs])
        return [header] + body


def _section_rows(prefix: str, nodes: list[LayerNode], in_shape) -> list[CostRow]:
    shapes = trace_shapes(nodes, in_shape)
    rows = []
    prev = tuple(in_shape)
    for i, (node, out_shape) in enumerate(zip(nodes, shapes)):
        params, trainable = _node_params(node)
        rows.append(
            CostRow(
                name=f"{prefix}.{i:02d}.{node.kind}",
                kind=node.kind,
                params=params,
                trainable_params=trainable,
                macs=_node_macs(node, prev, out_shape),
            )
        )
        prev = out_shape
    return rows


def count_params_flops(spec: NetworkSpec) -> CostTable:
    """Per-layer parameter and per-sample MAC table; row names align with
    the model's parameter-store prefixes."""
    rows = []
    rows += _section_rows("spatial", spec.spatial, spec.input_shape)
    rows += _section_rows("spectral", spec.spectral, spec.input_shape)
    if spec.fusion is not None:
        d_s = trace_shapes(spec.spatial, spec.input_shape)[-1][0]
        d_f = trace_shapes(spec.spectral, spec.input_shape)[-1][0]
        head_in = (spec.fusion.output_dim(d_s, d_f),)
    else:
        tower = spec.spatial or spec.spectral
        head_in = trace_shapes(tower, spec.input_shape)[-1] if tower else tuple(spec.input_shape)
    rows += _section_rows("head", spec.head, head_in)
    return CostTable(
        rows=rows,
        total_params=sum(r.params for r in rows),
        total_trainable=sum(r.trainable_params for r in rows),
        total_macs=sum(r.macs for r in rows),
    )


def depthwise_ratio(kernel: int, out_channels: int) -> Fraction:
    """Exact cost ratio of a depthwise-separable block to a full convolution
    with the same kernel and width: 1/Cout + 1/K^2."""
    if kernel < 1 or out_channels < 1:
        raise ConfigError("kernel and out_channels must be >= 1")
    return Fraction(1, out_channels) + Fraction(1, kernel * kernel)


# ---- branch contribution ----------------------------------------------------


def contribution_score(v: np.ndarray) -> float:
    """Balanced magnitude of a branch vector: ||v||_2 / sqrt(d)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ConfigError(f"expected a single vector, got shape {v.shape}")
    return float(np.linalg.norm(v) / np.sqrt(v.size))


@dataclass
class ContributionReport:
    sample_scores: list[dict] = field(default_factory=list)
    per_class: list[dict] = field(default_factory=list)
    overall: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "samples": self.sample_scores,
            "per_class": self.per_class,
            "overall": self.overall,
        }

    def csv_rows(self) -> list[list]:
        header = [
            "index", "label", "c_spatial", "c_spectral",
            "share_spatial", "share_spectral", "degenerate",
        ]
        body = [
            [
                s["index"], s["label"], s["c_spatial"], s["c_spectral"],
                s["share_spatial"], s["share_spectral"], int(s["degenerate"]),
            ]
            for s in self.sample_scores
        ]
        return [header] + body


def contribution_report(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> ContributionReport:
    """Per-sample branch scores and shares for a fused model, aggregated by
    true class and overall.  Both-zero vectors get 0.5/0.5 with a flag."""
    if not model.is_fused:
        raise ConfigError("contribution report requires a fused model")
    samples = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        vecs = model.extract_branch_vectors(chunk)
        for j in range(len(chunk)):
            c_s = contribution_score(vecs.v_s[j])
            c_f = contribution_score(vecs.v_f[j])
            total = c_s + c_f
            degenerate = total == 0.0
            share_s = 0.5 if degenerate else c_s / total
            samples.append(
                {
                    "index": start + j,
                    "label": int(labels[start + j]),
                    "c_spatial": c_s,
                    "c_spectral": c_f,
                    "share_spatial": share_s,
                    "share_spectral": 1.0 - share_s,
                    "degenerate": degenerate,
                }
            )
    per_class = []
    all_labels = sorted({s["label"] for s in samples})
    for cls in all_labels:
        rows = [s for s in samples if s["label"] == cls]
        per_class.append(
            {
                "label": cls,
                "n": len(rows),
                "mean_share_spatial": float(np.mean([s["share_spatial"] for s in rows])),
                "mean_share_spectral": float(np.mean([s["share_spectral"] for s in rows])),
            }
        )
    overall = {
        "n": len(samples),
        "mean_share_spatial": float(np.mean([s["share_spatial"] for s in samples])) if samples else 0.5,
        "mean_share_spectral": float(np.mean([s["share_spectral"] for s in samples])) if samples else 0.5,
        "degenerate_count": sum(s["degenerate"] for s in samples),
    }
    return ContributionReport(sample_scores=samples, per_class=per_class, overall=overall)

"""Architecture assembly: declarative network specs, the three model
families, forward/backward wiring through the fusion heads, and the
single-file checkpoint container.

A model is described by a ``NetworkSpec`` (JSON-serializable node lists for
the spatial tower, spectral tower, and dense head, plus an optional fusion
kind) and realized as a ``Model`` holding live layer objects.  Builders
construct specs; ``Model`` construction and checkpoint loading share the
same spec-to-layers path.

Model families exposed to the CLI:
  spatial       four conv blocks -> GAP -> dense vector -> classifier
  spectranet1   one spectral filter -> depthwise-separable summarizer -> funnel
  spectranet2   two spectral filters (optional pool between) -> same summarizer
  s3f-concat    both towers, concatenated vectors -> dense head
  s3f-bilinear  both towers, normalized bilinear outer product -> dense head
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, IntegrityError, ShapeError
from .fusion import FusionKind, fuse, fuse_backward
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    DepthwiseSeparableBlock,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    ReLU,
    iter_layers,
    rng_for,
)
from .spectral import SpectralFilter

MODEL_FAMILIES = ("spatial", "spectranet1", "spectranet2", "s3f-concat", "s3f-bilinear")

CHECKPOINT_FORMAT = "s3fnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerNode:
    """One declarative layer; unused fields stay None and are omitted in JSON."""

    kind: str
    kernel: int | None = None
    stride: int | None = None
    padding: str | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    in_features: int | None = None
    units: int | None = None
    rate: float | None = None
    window: int | None = None
    use_norm: bool | None = None
    height: int | None = None
    width: int | None = None
    init_scheme: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @staticmethod
    def from_dict(d: dict) -> "LayerNode":
        return LayerNode(**d)


@dataclass
class NetworkSpec:
    """Declarative architecture: towers + head + fusion, JSON round-trippable."""

    family: str
    input_shape: tuple[int, int, int]
    n_classes: int
    spatial: list[LayerNode] = field(default_factory=list)
    spectral: list[LayerNode] = field(default_factory=list)
    head: list[LayerNode] = field(default_factory=list)
    fusion: FusionKind | None = None

    def __post_init__(self):
        if self.family not in MODEL_FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        both = bool(self.spatial) and bool(self.spectral)
        if (self.fusion is not None) != both:
            raise ConfigError("fusion must be present exactly when both towers are")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "spatial": [n.to_dict() for n in self.spatial],
            "spectral": [n.to_dict() for n in self.spectral],
            "head": [n.to_dict() for n in self.head],
            "fusion": self.fusion.to_dict() if self.fusion else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            family=d["family"],
            input_shape=tuple(d["input_shape"]),
            n_classes=int(d["n_classes"]),
            spatial=[LayerNode.from_dict(n) for n in d.get("spatial", [])],
            spectral=[LayerNode.from_dict(n) for n in d.get("spectral", [])],
            head=[LayerNode.from_dict(n) for n in d.get("head", [])],
            fusion=FusionKind.from_dict(d["fusion"]) if d.get("fusion") else None,
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def canonical_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def trace_shapes(
    nodes: list[LayerNode], input_shape: tuple[int, ...]
) -> list[tuple[int, ...]]:
    """Output shape after each node (batch axis omitted); validates chaining."""
    shape = tuple(input_shape)
    out: list[tuple[int, ...]] = []
    for i, node in enumerate(nodes):
        where = f"node {i} ({node.kind})"
        if node.kind in ("conv", "dwsep", "batchnorm", "maxpool", "spectral", "gap"):
            if len(shape) != 3:
                raise ConfigError(f"{where}: needs [H,W,C] input, has {shape}")
        if node.kind == "conv":
            h, w, c = shape
            if c != node.in_channels:
                raise ConfigError(f"{where}: expects {node.in_channels} channels, has {c}")
            s = node.stride or 1
            if (node.padding or "same") == "same":
                h2, w2 = -(-h // s), -(-w // s)
            else:
                h2, w2 = (h - node.kernel) // s + 1, (w - node.kernel) // s + 1
            shape = (h2, w2, node.out_channels)
        elif node.kind == "dwsep":
            h, w, c = shape
            if c != node.in_channels:
                raise ConfigError(f"{where}: expects {node.in_channels} channels, has {c}")
            shape = (h, w, node.out_channels)
        elif node.kind == "batchnorm":
            if shape[-1] != node.out_channels:
                raise ConfigError(f"{where}: expects {node.out_channels} channels, has {shape[-1]}")
        elif node.kind == "relu" or node.kind == "dropout":
            pass
        elif node.kind == "maxpool":
            h, w, c = shape
            v = node.window or 2
            if h % v or w % v:
                raise ConfigError(f"{where}: {h}x{w} not divisible by window {v}")
            shape = (h // v, w // v, c)
        elif node.kind == "spectral":
            h, w, c = shape
            if c != node.in_channels:
                raise ConfigError(f"{where}: expects {node.in_channels} channels, has {c}")
            if h != node.height or w != node.width:
                raise ConfigError(
                    f"{where}: bound to {node.height}x{node.width}, input is {h}x{w}"
                )
            shape = (h, w, node.out_channels)
        elif node.kind == "gap":
            shape = (shape[2],)
        elif node.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif node.kind == "dense":
            if len(shape) != 1 or shape[0] != node.in_features:
                raise ConfigError(f"{where}: expects [{node.in_features}], has {shape}")
            shape = (node.units,)
        else:
            raise ConfigError(f"{where}: unknown layer kind")
        out.append(shape)
    return out


def _make_layer(node: LayerNode, name: str) -> Layer:
    if node.kind == "conv":
        return Conv2d(
            name,
            node.kernel,
            node.in_channels,
            node.out_channels,
            stride=node.stride or 1,
            padding=node.padding or "same",
        )
    if node.kind == "dwsep":
        return DepthwiseSeparableBlock(
            name,
            node.kernel or 3,
            node.in_channels,
            node.out_channels,
            use_norm=True if node.use_norm is None else node.use_norm,
        )
    if node.kind == "batchnorm":
        return BatchNorm(name, node.out_channels)
    if node.kind == "relu":
        return ReLU(name)
    if node.kind == "maxpool":
        return MaxPool2d(name, node.window or 2)
    if node.kind == "dropout":
        return Dropout(name, node.rate or 0.0)
    if node.kind == "spectral":
        return SpectralFilter(
            name,
            node.in_channels,
            node.out_channels,
            node.height,
            node.width,
            init_scheme=node.init_scheme or "spatial-equivalent",
        )
    if node.kind == "gap":
        return GlobalAvgPool(name)
    if node.kind == "flatten":
        return Flatten(name)
    if node.kind == "dense":
        return Dense(name, node.in_features, node.units)
    raise ConfigError(f"unknown layer kind {node.kind!r}")


def _run(layers: list[Layer], x: np.ndarray, train: bool) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x, train)
    return x


def _run_back(layers: list[Layer], d: np.ndarray) -> np.ndarray:
    for layer in reversed(layers):
        d = layer.backward(d)
    return d


@dataclass
class BranchVectors:
    v_s: np.ndarray
    v_f: np.ndarray


class Model:
    """Live network built from a NetworkSpec."""

    def __init__(self, spec: NetworkSpec):
        spatial_shapes = trace_shapes(spec.spatial, spec.input_shape)
        spectral_shapes = trace_shapes(spec.spectral, spec.input_shape)
        if spec.fusion is not None:
            if len(spatial_shapes[-1]) != 1 or len(spectral_shapes[-1]) != 1:
                raise ConfigError("fused towers must end in flat vectors")
            head_in = (
                spec.fusion.output_dim(spatial_shapes[-1][0], spectral_shapes[-1][0]),
            )
        else:
            tower_shapes = spatial_shapes or spectral_shapes
            head_in = tower_shapes[-1] if tower_shapes else tuple(spec.input_shape)
        trace_shapes(spec.head, head_in)
        self.spec = spec
        self.fusion = spec.fusion
        self.spatial_layers = [
            _make_layer(n, f"spatial.{i:02d}.{n.kind}") for i, n in enumerate(spec.spatial)
        ]
        self.spectral_layers = [
            _make_layer(n, f"spectral.{i:02d}.{n.kind}") for i, n in enumerate(spec.spectral)
        ]
        self.head_layers = [
            _make_layer(n, f"head.{i:02d}.{n.kind}") for i, n in enumerate(spec.head)
        ]
        self._fuse_cache = None

    @property
    def is_fused(self) -> bool:
        return self.fusion is not None

    def leaf_layers(self) -> list[Layer]:
        return iter_layers(self.spatial_layers + self.spectral_layers + self.head_layers)

    def initialize(self, seed: int) -> "Model":
        for leaf in self.leaf_layers():
            leaf.init_params(rng_for(seed, leaf.name))
            leaf.set_rng_key(seed)
        return self

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ShapeError(
                f"expected input [B,{','.join(map(str, self.spec.input_shape))}], got {x.shape}"
            )

    def forward(
        self, x: np.ndarray, train: bool = False, zero_branch: str | None = None
    ) -> np.ndarray:
        self._check_input(x)
        if not self.is_fused:
            tower = self.spatial_layers or self.spectral_layers
            vec = _run(tower, x, train)
            return _run(self.head_layers, vec, train)
        v_s = _run(self.spatial_layers, x, train)
        v_f = _run(self.spectral_layers, x, train)
        if zero_branch == "spatial":
            v_s = np.zeros_like(v_s)
        elif zero_branch == "spectral":
            v_f = np.zeros_like(v_f)
        elif zero_branch is not None:
            raise ConfigError(f"unknown branch {zero_branch!r}")
        fused, cache = fuse(self.fusion, v_s, v_f)
        self._fuse_cache = cache
        return _run(self.head_layers, fused, train)

    def backward(self, dlogits: np.ndarray) -> None:
        d = _run_back(self.head_layers, dlogits)
        if not self.is_fused:
            tower = self.spatial_layers or self.spectral_layers
            _run_back(tower, d)
            return
        if self._fuse_cache is None:
            raise ConfigError("backward before forward on a fused model")
        dv_s, dv_f = fuse_backward(self.fusion, d, self._fuse_cache)
        self._fuse_cache = None
        _run_back(self.spatial_layers, dv_s)
        _run_back(self.spectral_layers, dv_f)

    def predict(self, x: np.ndarray) -> np.ndarray:
        from .ops import softmax

        return softmax(self.forward(x, train=False))

    def extract_branch_vectors(self, x: np.ndarray) -> BranchVectors:
        if not self.is_fused:
            raise ConfigError("branch extraction requires a fused model")
        self._check_input(x)
        return BranchVectors(
            v_s=_run(self.spatial_layers, x, False),
            v_f=_run(self.spectral_layers, x, False),
        )

    # ---- parameter access -------------------------------------------------

    def param_store(self) -> dict[str, np.ndarray]:
        return {
            f"{leaf.name}/{key}": value
            for leaf in self.leaf_layers()
            for key, value in leaf.params.items()
        }

    def grad_store(self) -> dict[str, np.ndarray]:
        return {
            f"{leaf.name}/{key}": value
            for leaf in self.leaf_layers()
            for key, value in leaf.grads.items()
        }

    def trainable_names(self) -> list[str]:
        return [
            f"{leaf.name}/{key}"
            for leaf in self.leaf_layers()
            for key in leaf.params
            if key not in leaf.non_trainable
        ]

    def set_param(self, name: str, value: np.ndarray) -> None:
        layer_name, key = name.rsplit("/", 1)
        for leaf in self.leaf_layers():
            if leaf.name == layer_name and key in leaf.params:
                if leaf.params[key].shape != value.shape:
                    raise IntegrityError(
                        f"shape mismatch for {name}: "
                        f"{leaf.params[key].shape} vs {value.shape}"
                    )
                leaf.params[key] = value
                return
        raise IntegrityError(f"no parameter named {name}")


# ---- builders ---------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """Width/rate knobs for the builders; defaults are the canonical sizes."""

    spatial_widths: tuple[int, ...] = (32, 64, 128, 256)
    spatial_vector_dim: int = 64  # d_s
    spatial_dropout: float = 0.25  # conventional rate; a knob, nothing pins it
    spectral_filters: int = 32
    spectral_filters2: int = 64
    summarizer_widths: tuple[int, ...] = (32, 48, 64)
    funnel_width: int = 16
    funnel_dropout: float = 0.1875
    spectral_vector_dim: int = 4  # d_f
    pool_between: bool = True
    spectral_init: str = "spatial-equivalent"
    head_width: int = 0  # 0 = classifier directly on the fused vector

    def merged(self, overrides: dict | None) -> "ModelConfig":
        if not overrides:
            return self
        bad = set(overrides) - set(self.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown model override(s): {sorted(bad)}")
        clean = {
            k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()
        }
        return replace(self, **clean)


def spatial_tower_nodes(
    input_shape: tuple[int, int, int], cfg: ModelConfig
) -> list[LayerNode]:
    """Four conv blocks -> GAP -> dense(d_s) -> ReLU, producing v_s."""
    h, w, c = input_shape
    n_blocks = len(cfg.spatial_widths)
    factor = 2**n_blocks
    if h % factor or w % factor:
        raise ConfigError(
            f"spatial tower needs input divisible by {factor}, got {h}x{w}"
        )
    nodes: list[LayerNode] = []
    prev = c
    for width in cfg.spatial_widths:
        for _ in range(2):
            nodes.append(
                LayerNode("conv", kernel=3, in_channels=prev, out_channels=width)
            )
            nodes.append(LayerNode("batchnorm", out_channels=width))
            nodes.append(LayerNode("relu"))
            prev = width
        nodes.append(LayerNode("maxpool", window=2))
        nodes.append(LayerNode("dropout", rate=cfg.spatial_dropout))
    nodes.append(LayerNode("gap"))
    nodes.append(
        LayerNode("dense", in_features=prev, units=cfg.spatial_vector_dim)
    )
    nodes.append(LayerNode("relu"))
    return nodes


def spectral_tower_nodes(
    variant: int, input_shape: tuple[int, int, int], cfg: ModelConfig
) -> list[LayerNode]:
    """Spectral filter(s) -> dw-sep summarizer -> dense funnel, producing v_f."""
    h, w, c = input_shape
    if variant not in (1, 2):
        raise ConfigError(f"unknown spectral branch variant {variant}")
    nodes: list[LayerNode] = []
    pools = len(cfg.summarizer_widths)

    def spectral_node(cin, cout, hh, ww):
        return LayerNode(
            "spectral",
            in_channels=cin,
            out_channels=cout,
            height=hh,
            width=ww,
            init_scheme=cfg.spectral_init,
        )

    nodes.append(spectral_node(c, cfg.spectral_filters, h, w))
    prev = cfg.spectral_filters
    hh, ww = h, w
    if variant == 2:
        if cfg.pool_between:
            nodes.append(LayerNode("maxpool", window=2))
            hh, ww = hh // 2, ww // 2
        nodes.append(spectral_node(prev, cfg.spectral_filters2, hh, ww))
        prev = cfg.spectral_filters2
    for width in cfg.summarizer_widths:
        nodes.append(
            LayerNode("dwsep", kernel=3, in_channels=prev, out_channels=width)
        )
        nodes.append(LayerNode("maxpool", window=2))
        prev = width
    factor = 2**pools * (2 if variant == 2 and cfg.pool_between else 1)
    if h % factor or w % factor:
        raise ConfigError(
            f"spectral tower variant {variant} needs input divisible by {factor}, got {h}x{w}"
        )
    hh, ww = h // factor, w // factor
    flat = hh * ww * prev
    nodes.append(LayerNode("flatten"))
    nodes.append(LayerNode("dense", in_features=flat, units=cfg.funnel_width))
    nodes.append(LayerNode("relu"))
    nodes.append(LayerNode("dropout", rate=cfg.funnel_dropout))
    nodes.append(
        LayerNode("dense", in_features=cfg.funnel_width, units=cfg.spectral_vector_dim)
    )
    nodes.append(LayerNode("relu"))
    return nodes


def _head_nodes(in_dim: int, n_classes: int, head_width: int) -> list[LayerNode]:
    nodes = []
    if head_width > 0:
        nodes.append(LayerNode("dense", in_features=in_dim, units=head_width))
        nodes.append(LayerNode("relu"))
        in_dim = head_width
    nodes.append(LayerNode("dense", in_features=in_dim, units=n_classes))
    return nodes


def build_network_spec(
    family: str,
    input_shape: tuple[int, int, int],
    n_classes: int,
    config: ModelConfig | None = None,
    fusion_normalize: bool = True,
) -> NetworkSpec:
    cfg = config or ModelConfig()
    if family == "spatial":
        tower = spatial_tower_nodes(input_shape, cfg)
        head = _head_nodes(cfg.spatial_vector_dim, n_classes, 0)
        return NetworkSpec(family, input_shape, n_classes, spatial=tower, head=head)
    if family in ("spectranet1", "spectranet2"):
        variant = 1 if family == "spectranet1" else 2
        tower = spectral_tower_nodes(variant, input_shape, cfg)
        head = _head_nodes(cfg.spectral_vector_dim, n_classes, 0)
        return NetworkSpec(family, input_shape, n_classes, spectral=tower, head=head)
    if family in ("s3f-concat", "s3f-bilinear"):
        kind = "concat" if family == "s3f-concat" else "bilinear"
        fusion = FusionKind(kind, normalize=fusion_normalize)
        spatial = spatial_tower_nodes(input_shape, cfg)
        spectral = spectral_tower_nodes(1, input_shape, cfg)
        fused_dim = fusion.output_dim(cfg.spatial_vector_dim, cfg.spectral_vector_dim)
        head = _head_nodes(fused_dim, n_classes, cfg.head_width)
        return NetworkSpec(
            family,
            input_shape,
            n_classes,
            spatial=spatial,
            spectral=spectral,
            head=head,
            fusion=fusion,
        )
    raise ConfigError(f"unknown model family {family!r}")


def build_model(
    family: str,
    input_shape: tuple[int, int, int],
    n_classes: int,
    config: ModelConfig | None = None,
    fusion_normalize: bool = True,
) -> Model:
    return Model(
        build_network_spec(family, input_shape, n_classes, config, fusion_normalize)
    )


def build_spatial_baseline(
    input_shape: tuple[int, int, int], n_classes: int, config: ModelConfig | None = None
) -> Model:
    return build_model("spatial", input_shape, n_classes, config)


def build_spectranet(
    variant: int,
    input_shape: tuple[int, int, int],
    n_classes: int,
    config: ModelConfig | None = None,
) -> Model:
    if variant not in (1, 2):
        raise ConfigError(f"unknown spectranet variant {variant}")
    return build_model(f"spectranet{variant}", input_shape, n_classes, config)


def build_s3fnet(
    input_shape: tuple[int, int, int],
    n_classes: int,
    fusion: FusionKind,
    config: ModelConfig | None = None,
) -> Model:
    family = "s3f-concat" if fusion.kind == "concat" else "s3f-bilinear"
    return build_model(
        family, input_shape, n_classes, config, fusion_normalize=fusion.normalize
    )


# ---- checkpoint container -----------------------------------------------


def save_checkpoint(path: str, model: Model) -> None:
    """Single file: little-endian uint64 header length, JSON header, then
    raw little-endian float64 tensor payloads at the offsets the manifest
    records (relative to the end of the header)."""
    params = model.param_store()
    manifest = []
    offset = 0
    blobs = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "float64",
                "offset": offset,
            }
        )
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "spec_hash": model.spec.canonical_hash(),
        "params": manifest,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)


def _read_header(path: str) -> tuple[dict, int]:
    """Parse the JSON header; returns it with the payload byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) < 8:
            raise IntegrityError(f"{path}: truncated checkpoint header")
        (length,) = struct.unpack("<Q", raw)
        encoded = fh.read(length)
    if len(encoded) < length:
        raise IntegrityError(f"{path}: truncated checkpoint header")
    header = json.loads(encoded.decode("utf-8"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    return header, 8 + length


def read_checkpoint_header(path: str) -> dict:
    return _read_header(path)[0]


def load_checkpoint(path: str) -> Model:
    header, header_len = _read_header(path)
    spec = NetworkSpec.from_dict(header["spec"])
    if spec.canonical_hash() != header.get("spec_hash"):
        raise IntegrityError(f"{path}: spec hash mismatch (corrupted or edited header)")
    model = Model(spec)
    expected = set(model.param_store())
    stored = {entry["name"] for entry in header["params"]}
    if expected != stored:
        missing = sorted(expected - stored)
        extra = sorted(stored - expected)
        raise IntegrityError(
            f"{path}: parameter manifest mismatch (missing {missing}, extra {extra})"
        )
    with open(path, "rb") as fh:
        blob = fh.read()
    payload = blob[header_len:]
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(payload):
            raise IntegrityError(f"{path}: payload truncated at {entry['name']}")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(entry["shape"])
        model.set_param(entry["name"], arr.astype(np.float64))
    return model

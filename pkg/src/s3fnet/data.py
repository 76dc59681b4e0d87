"""Dataset plumbing: IDX binary ingest, deterministic stratified splits, and
synthetic vision tasks that give the two network branches separable
advantages.

Synthetic tasks
  shape        filled disc vs square of matched area at a random position;
               a morphology cue with no frequency signature
  texture      sinusoidal gratings with per-class spatial frequency and
               fully random phase/orientation; a global-spectrum cue with
               no stable local geometry
  conjunction  four classes = {disc, square} x {low, high frequency}; both
               cues are needed to separate all classes.  The two grating
               frequencies are one cycle apart, so the frequency bit is
               easy to read off the spectrum but nearly invisible to local
               patch statistics

Every sample draws from its own rng stream seeded with [seed, index], so
generation is order-independent and bitwise reproducible.  Pixel levels are
chosen to keep the clipping fraction well under 1% at noise sigma <= 0.1.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    IdxBadMagicError,
    IdxCountMismatchError,
    IdxTruncatedError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SHAPE_FG = 0.75
SHAPE_BG = 0.25
TEXTURE_MEAN = 0.5
TEXTURE_AMP = 0.25
CONJ_BASE = 0.4
CONJ_AMP = 0.065
CONJ_SHAPE_BOOST = 0.30

TASKS = ("shape", "texture", "conjunction")
_DEFAULT_CLASSES = {"shape": 2, "texture": 2, "conjunction": 4}


@dataclass
class LabeledDataset:
    images: np.ndarray  # [N,H,W,C] in [0,1]
    labels: np.ndarray  # [N] int64
    class_names: list[str]
    split: str = "all"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be [N,H,W,C], got {self.images.shape}")
        if self.labels.shape != (len(self.images),):
            raise DataError("labels length must match image count")
        if np.any(np.isnan(self.images)):
            raise DataError("NaN pixels")
        k = len(self.class_names)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
            raise DataError(f"labels outside [0,{k})")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, indices: np.ndarray, split: str | None = None) -> "LabeledDataset":
        return LabeledDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            class_names=list(self.class_names),
            split=split if split is not None else self.split,
        )

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


# ---- IDX binary format --------------------------------------------------


def write_idx_images(path: str, images: np.ndarray) -> None:
    """images: [N,H,W] uint8 (or [N,H,W,1]); big-endian IDX3 layout."""
    arr = np.asarray(images)
    if arr.ndim == 4 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim != 3:
        raise DataError(f"expected [N,H,W] uint8 images, got {arr.shape}")
    arr = arr.astype(np.uint8)
    n, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(arr.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    arr = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(arr)))
        fh.write(arr.tobytes())


def _read_exact(fh, count: int, path: str, what: str) -> bytes:
    blob = fh.read(count)
    if len(blob) < count:
        raise IdxTruncatedError(f"{path}: truncated while reading {what}")
    return blob


def load_idx(
    images_path: str, labels_path: str, class_names: list[str] | None = None
) -> LabeledDataset:
    """Read an IDX image/label pair; pixels scale to [0,1] as float64."""
    with open(images_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, images_path, "magic"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxBadMagicError(
                f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        n, h, w = struct.unpack(">III", _read_exact(fh, 12, images_path, "dims"))
        raw = _read_exact(fh, n * h * w, images_path, "pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w, 1) / 255.0

    with open(labels_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, labels_path, "magic"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxBadMagicError(
                f"{labels_path}: magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        (count,) = struct.unpack(">I", _read_exact(fh, 4, labels_path, "count"))
        labels = np.frombuffer(
            _read_exact(fh, count, labels_path, "label data"), dtype=np.uint8
        ).astype(np.int64)

    if count != n:
        raise IdxCountMismatchError(
            f"{images_path} has {n} images but {labels_path} has {count} labels"
        )
    if class_names is None:
        k = int(labels.max()) + 1 if len(labels) else 1
        class_names = [f"class{i}" for i in range(k)]
    return LabeledDataset(images=images, labels=labels, class_names=class_names)


def save_dataset_idx(prefix: str, dataset: LabeledDataset) -> tuple[str, str]:
    """Write `<prefix>-images.idx` / `<prefix>-labels.idx`, quantizing to uint8."""
    images_path = f"{prefix}-images.idx"
    labels_path = f"{prefix}-labels.idx"
    quantized = np.clip(np.rint(dataset.images[..., 0] * 255.0), 0, 255)
    write_idx_images(images_path, quantized.astype(np.uint8))
    write_idx_labels(labels_path, dataset.labels)
    return images_path, labels_path


# ---- synthetic generators -------------------------------------------------


@dataclass(frozen=True)
class SynthTaskSpec:
    task: str
    size: int = 32
    n_classes: int | None = None
    per_class: int = 400
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown synthetic task {self.task!r}")
        if self.size < 16:
            raise ConfigError("image size must be >= 16")
        if self.noise < 0:
            raise ConfigError("noise sigma must be >= 0")
        if self.per_class < 1:
            raise ConfigError("per_class must be >= 1")
        if self.n_classes is None:
            object.__setattr__(self, "n_classes", _DEFAULT_CLASSES[self.task])
        if self.task == "shape" and self.n_classes != 2:
            raise ConfigError("shape task has exactly 2 classes")
        if self.task == "conjunction" and self.n_classes != 4:
            raise ConfigError("conjunction task has exactly 4 classes")
        if self.task == "texture":
            if self.n_classes < 2:
                raise ConfigError("texture task needs >= 2 classes")
            freqs = class_frequencies(self.n_classes, self.size)
            if len(set(freqs)) != len(freqs):
                raise ConfigError(
                    f"cannot fit {self.n_classes} distinct frequencies at size {self.size}"
                )

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "size": self.size,
            "n_classes": self.n_classes,
            "per_class": self.per_class,
            "noise": self.noise,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SynthTaskSpec":
        known = set(SynthTaskSpec.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown synthetic task field(s): {sorted(bad)}")
        return SynthTaskSpec(**d)


def class_frequencies(n_classes: int, size: int) -> list[int]:
    """Grating frequencies in cycles per image: 3 up to at most 9 per step
    of 6, clamped below Nyquist."""
    f_max = size // 2 - 1
    top = min(3 + 6 * (n_classes - 1), f_max)
    return [int(round(f)) for f in np.linspace(3, top, n_classes)]


def conjunction_frequencies(size: int) -> list[int]:
    """Grating pair for the conjunction task, in cycles per image.

    Adjacent frequencies land in neighboring spectral rings, so they stay
    trivially separable in the frequency domain while their local
    statistics (contrast, gradient energy) are nearly identical.  The pair
    sits high enough that the gratings alias away after one 2x2 pool, so
    a pooled conv tower only ever sees them at full resolution.
    """
    f_hi = min(11, size // 2 - 1)  # [10, 11] from size 24 up
    return [f_hi - 1, f_hi]


def _grating(size: int, freq: float, theta: float, phase: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    t = (xx * np.cos(theta) + yy * np.sin(theta)) * (2 * np.pi * freq / size)
    return np.sin(t + phase)


def _shape_mask(size: int, kind: str, rng: np.random.Generator) -> np.ndarray:
    """Random-position disc or square; square side matches the disc area."""
    radius = rng.uniform(size / 6.0, size / 4.0)
    half_side = radius * np.sqrt(np.pi) / 2.0  # side s with s^2 == pi r^2
    margin = max(radius, half_side) + 1.0
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if kind == "disc":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    return (np.abs(yy - cy) <= half_side) & (np.abs(xx - cx) <= half_side)


def _render(spec: SynthTaskSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    s = spec.size
    if spec.task == "shape":
        img = np.full((s, s), SHAPE_BG)
        mask = _shape_mask(s, "disc" if label == 0 else "square", rng)
        img[mask] = SHAPE_FG
    elif spec.task == "texture":
        freq = class_frequencies(spec.n_classes, s)[label]
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        img = TEXTURE_MEAN + TEXTURE_AMP * _grating(s, freq, theta, phase)
    else:  # conjunction: label = 2*shape_bit + freq_bit
        shape_bit, freq_bit = divmod(label, 2)
        pair = conjunction_frequencies(s)
        freq = pair[freq_bit]
        # amplitude falls as 1/freq so the two gratings match first-derivative
        # energy: the frequency bit cannot be read off local contrast or
        # gradient statistics, only off the position of the spectral peak
        amp = CONJ_AMP * pair[0] / freq
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        img = CONJ_BASE + amp * _grating(s, freq, theta, phase)
        mask = _shape_mask(s, "disc" if shape_bit == 0 else "square", rng)
        img[mask] += CONJ_SHAPE_BOOST
    if spec.noise > 0:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _class_names(spec: SynthTaskSpec) -> list[str]:
    if spec.task == "shape":
        return ["disc", "square"]
    if spec.task == "texture":
        return [f"freq{f}" for f in class_frequencies(spec.n_classes, spec.size)]
    return ["disc-low", "disc-high", "square-low", "square-high"]


def generate_synthetic(spec: SynthTaskSpec) -> LabeledDataset:
    total = spec.n_classes * spec.per_class
    images = np.empty((total, spec.size, spec.size, 1))
    labels = np.empty(total, dtype=np.int64)
    for i in range(total):
        label = i % spec.n_classes
        rng = np.random.default_rng([spec.seed, i])
        images[i, :, :, 0] = _render(spec, label, rng)
        labels[i] = label
    return LabeledDataset(images=images, labels=labels, class_names=_class_names(spec))


# ---- stratified split -----------------------------------------------------


def _content_digest(image: np.ndarray) -> bytes:
    return hashlib.sha256(np.ascontiguousarray(image, dtype="<f8").tobytes()).digest()


def _largest_remainder(n: int, fractions) -> list[int]:
    quotas = [f * n for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda j: (-(quotas[j] - counts[j]), j))
    for j in order[:leftover]:
        counts[j] += 1
    return counts


def split(
    dataset: LabeledDataset, fractions, seed: int, names: tuple[str, ...] | None = None
) -> tuple[LabeledDataset, ...]:
    """Stratified, deterministic, and independent of input row order: inside
    each class, rows are canonically sorted by an image content digest, then
    shuffled by a [seed, class] stream and dealt by largest remainder."""
    fractions = list(fractions)
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    n_splits = len(fractions)
    if names is None:
        names = ("train", "val", "test") if n_splits == 3 else tuple(
            f"split{i}" for i in range(n_splits)
        )
    if len(names) != n_splits:
        raise ConfigError("one name per fraction")

    buckets: list[list[int]] = [[] for _ in range(n_splits)]
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < n_splits:
            raise DataError(
                f"class {c} has {len(members)} samples, fewer than {n_splits} splits"
            )
        digests = [_content_digest(dataset.images[i]) for i in members]
        members = members[np.argsort(np.array([d.hex() for d in digests]), kind="stable")]
        members = members[np.random.default_rng([seed, c]).permutation(len(members))]
        counts = _largest_remainder(len(members), fractions)
        at = 0
        for j, cnt in enumerate(counts):
            buckets[j].extend(members[at : at + cnt].tolist())
            at += cnt
    return tuple(
        dataset.subset(np.sort(np.array(bucket, dtype=np.int64)), split=name)
        for bucket, name in zip(buckets, names)
    )

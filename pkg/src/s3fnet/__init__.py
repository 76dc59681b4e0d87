"""s3fnet: a dual-branch spatial/spectral image classifier built on numpy.

The package implements a learnable Fourier-domain filter layer, a shallow
spectral branch built from it, a conventional convolutional branch, vector
fusion heads (concatenation and bilinear outer product), a weighted-loss
training loop, and static/empirical architecture analysis tools, plus a CLI
(`s3fnet`) and synthetic dataset generators for exercising the two branches.
"""

__version__ = "0.1.0"

from .data import SynthTaskSpec, generate_synthetic, load_idx, split
from .fusion import FusionKind
from .models import (
    ModelConfig,
    NetworkSpec,
    build_model,
    build_network_spec,
    load_checkpoint,
    save_checkpoint,
)
from .train import TrainConfig, evaluate, train_loop

__all__ = [
    "FusionKind",
    "ModelConfig",
    "NetworkSpec",
    "SynthTaskSpec",
    "TrainConfig",
    "build_model",
    "build_network_spec",
    "evaluate",
    "generate_synthetic",
    "load_checkpoint",
    "load_idx",
    "save_checkpoint",
    "split",
    "train_loop",
]

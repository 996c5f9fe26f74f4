"""Node-adaptive low-rank adaptation for spatio-temporal forecasters.

A frozen node-shared backbone is wrapped with node-specific predictor blocks
built from low-rank adaptive layers, and a learned gate blends the two
forecasts.  Everything runs on a small numpy reverse-mode autodiff engine.
"""

from .backbones import BackboneKind, build_graphconv, build_shared_mlp, normalize_adjacency
from .checkpoint import load_checkpoint, save_checkpoint
from .data import GraphSignalDataset, SplitSpec, generate_synthetic, load_dataset, prepare, save_dataset
from .errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    DataFormatError,
    DataLengthError,
    DimensionError,
    DivergenceError,
    NumericError,
    StLoraError,
    TapeStateError,
)
from .fusion import LossConfig, StLoraModel, build_stlora, freeze_backbone, stlora_forward, stlora_loss
from .nall import NallConfig, Variant, nall_forward, nall_init, nall_param_count
from .nsp import NspConfig, nsp_forward, nsp_init
from .tensor import Tensor, backward, no_grad
from .training import TrainConfig, compute_metrics, evaluate, param_report, train

__version__ = "0.1.0"

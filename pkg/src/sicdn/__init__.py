"""SHAP-guided CNN training laboratory.

A small numpy-backed stack: a float32 autodiff engine, a configurable
convolutional backbone with a single fully connected head, a gradient-based
Shapley attribution estimator over the head's input features, importance-
scaled Adam updates (optionally blended with normalized historical weights),
and a two-phase trainer with a lambda-sweep harness.
"""

from .data import Dataset, SynthConfig, batches, load_dir, save_dataset, synth_generate
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DecodeError,
    DimensionError,
    DomainError,
    LayoutError,
    NumericError,
    SicdnError,
)
from .metrics import ConfusionCounts, classify_metrics, confusion_counts, roc_auc
from .model import (
    BackboneConfig,
    Model,
    build,
    clone,
    densenet121_analog_preset,
    extract_features,
    forward,
    load_adam_state,
    load_checkpoint,
    save_checkpoint,
    tiny_preset,
)
from .shap import (
    ImportanceMatrix,
    ShapConfig,
    batch_mean_abs,
    gradient_shap,
    minmax_normalize,
)
from .tensor import Tensor, backward
from .training import (
    RunReport,
    TrainConfig,
    lambda_sweep,
    plain_train,
    pretrain,
    sicdn_train,
)
from .update import (
    AdamState,
    BlendConfig,
    adam_step,
    apply_importance,
    blended_scale_matrix,
    cross_entropy,
    normalize_weights,
    sicdn_step,
)

__all__ = [
    "Tensor",
    "backward",
    "BackboneConfig",
    "Model",
    "build",
    "clone",
    "forward",
    "extract_features",
    "tiny_preset",
    "densenet121_analog_preset",
    "save_checkpoint",
    "load_checkpoint",
    "load_adam_state",
    "ShapConfig",
    "ImportanceMatrix",
    "gradient_shap",
    "batch_mean_abs",
    "minmax_normalize",
    "AdamState",
    "BlendConfig",
    "cross_entropy",
    "adam_step",
    "apply_importance",
    "normalize_weights",
    "blended_scale_matrix",
    "sicdn_step",
    "TrainConfig",
    "RunReport",
    "pretrain",
    "plain_train",
    "sicdn_train",
    "lambda_sweep",
    "Dataset",
    "SynthConfig",
    "synth_generate",
    "load_dir",
    "save_dataset",
    "batches",
    "ConfusionCounts",
    "confusion_counts",
    "classify_metrics",
    "roc_auc",
    "SicdnError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DataError",
    "LayoutError",
    "DecodeError",
    "CheckpointError",
    "NumericError",
    "DomainError",
]

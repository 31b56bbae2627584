"""Configurable small CNN backbone with a single fully connected head.

The backbone is a plain stack of conv+relu stages followed by either a
global average pool or a flatten; only the head's weight matrix takes part
in importance scaling, so the backbone exists to produce the head-input
feature vector. The head bias is never importance-scaled (it still receives
optimizer updates).

Checkpoint file layout (all little-endian):

    magic  b"SICD"
    u32    format version (1)
    u32    parameter count
    per parameter:
        u16   name length, then UTF-8 name
        u8    rank
        u32   each dimension
        f32   raw row-major data
    optionally, a trailing optimizer-state block:
        magic b"ADAM"
        u64   step counter
        f64   learning rate, beta1, beta2, epsilon
        u32   parameter count
        per parameter:
            u16   name length, then UTF-8 name
            f64   first-moment data, then second-moment data
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .errors import CheckpointError, ConfigError, DimensionError
from .tensor import (
    Tensor,
    conv2d_forward,
    flatten,
    global_average_pool,
    linear_forward,
    relu,
)

CHECKPOINT_MAGIC = b"SICD"
ADAM_MAGIC = b"ADAM"
CHECKPOINT_VERSION = 1

POOL_GAP = "gap"
POOL_FLATTEN = "flatten"


@dataclass(frozen=True)
class BackboneConfig:
    """Shape of the backbone and head; fully determines every parameter."""

    input_shape: tuple[int, int, int]  # (channels, height, width)
    channels: tuple[int, ...]
    kernel_sizes: tuple[int, ...]
    strides: tuple[int, ...]
    paddings: tuple[int, ...]
    pool: str
    fc_input_width: int
    num_classes: int
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        stage_lengths = {
            len(self.channels),
            len(self.kernel_sizes),
            len(self.strides),
            len(self.paddings),
        }
        if len(stage_lengths) != 1 or not self.channels:
            raise ConfigError(
                "channels, kernel_sizes, strides and paddings must be equal-length, "
                f"non-empty tuples; got lengths {len(self.channels)}, "
                f"{len(self.kernel_sizes)}, {len(self.strides)}, {len(self.paddings)}"
            )
        if self.pool not in (POOL_GAP, POOL_FLATTEN):
            raise ConfigError(f"pool must be '{POOL_GAP}' or '{POOL_FLATTEN}', got {self.pool!r}")
        if any(v < 1 for v in self.input_shape) or self.fc_input_width < 1:
            raise ConfigError("input_shape dimensions and fc_input_width must be positive")
        width = self.computed_feature_width()
        if width != self.fc_input_width:
            raise ConfigError(
                f"configured fc_input_width {self.fc_input_width} does not match the "
                f"flattened width after the final pool, {width}"
            )

    def stage_shapes(self) -> list[tuple[int, int, int]]:
        """Output (c, h, w) after each conv stage."""
        c, h, w = self.input_shape
        shapes = []
        for out_c, k, s, p in zip(self.channels, self.kernel_sizes, self.strides, self.paddings):
            if k > h + 2 * p or k > w + 2 * p:
                raise ConfigError(
                    f"stage kernel {k} larger than padded input {(h + 2 * p, w + 2 * p)}"
                )
            h = (h + 2 * p - k) // s + 1
            w = (w + 2 * p - k) // s + 1
            c = out_c
            shapes.append((c, h, w))
        return shapes

    def computed_feature_width(self) -> int:
        c, h, w = self.stage_shapes()[-1]
        return c if self.pool == POOL_GAP else c * h * w


def tiny_preset(num_classes: int = 2, seed: int = 0, input_shape=(1, 32, 32)) -> BackboneConfig:
    """Three stride-2 stages plus global average pooling: 32 head features."""
    return BackboneConfig(
        input_shape=tuple(input_shape),
        channels=(8, 16, 32),
        kernel_sizes=(3, 3, 3),
        strides=(2, 2, 2),
        paddings=(1, 1, 1),
        pool=POOL_GAP,
        fc_input_width=32,
        num_classes=num_classes,
        seed=seed,
    )


def densenet121_analog_preset(num_classes: int = 2, seed: int = 0, input_shape=(1, 32, 32)) -> BackboneConfig:
    """Four stages ending in 1024 channels under global average pooling.

    Mirrors the head dimensions of a large dense backbone (1024 features
    into the fully connected layer) at a fraction of the compute.
    """
    return BackboneConfig(
        input_shape=tuple(input_shape),
        channels=(16, 32, 64, 1024),
        kernel_sizes=(3, 3, 3, 3),
        strides=(2, 2, 2, 1),
        paddings=(1, 1, 1, 1),
        pool=POOL_GAP,
        fc_input_width=1024,
        num_classes=num_classes,
        seed=seed,
    )


PRESETS = {
    "tiny": tiny_preset,
    "densenet121-analog": densenet121_analog_preset,
}


class Model:
    """Parameter container: conv kernels plus the fully connected head."""

    def __init__(self, config: BackboneConfig, conv_kernels: list[Tensor], fc_weight: Tensor, fc_bias: Tensor):
        self.config = config
        self.conv_kernels = conv_kernels
        self.fc_weight = fc_weight
        self.fc_bias = fc_bias

    def parameters(self) -> dict[str, Tensor]:
        params = {f"conv{i}": k for i, k in enumerate(self.conv_kernels)}
        params["fc_weight"] = self.fc_weight
        params["fc_bias"] = self.fc_bias
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


def build(config: BackboneConfig) -> Model:
    """Deterministically initialize a model from its config and seed.

    Conv and head weights draw from a fan-in-scaled uniform; biases start
    at zero.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    kernels = []
    in_c = config.input_shape[0]
    for out_c, k in zip(config.channels, config.kernel_sizes):
        fan_in = in_c * k * k
        bound = math.sqrt(6.0 / fan_in)
        kernels.append(
            Tensor(rng.uniform(-bound, bound, (out_c, in_c, k, k)).astype(np.float32), requires_grad=True)
        )
        in_c = out_c
    n = config.fc_input_width
    bound = math.sqrt(6.0 / n)
    fc_weight = Tensor(
        rng.uniform(-bound, bound, (config.num_classes, n)).astype(np.float32), requires_grad=True
    )
    fc_bias = Tensor(np.zeros(config.num_classes, dtype=np.float32), requires_grad=True)
    return Model(config, kernels, fc_weight, fc_bias)


def clone(model: Model) -> Model:
    """Independent copy sharing nothing with the original."""
    copy = build(model.config)
    for name, param in copy.parameters().items():
        param.data[...] = model.parameters()[name].data
    return copy


def extract_features(model: Model, batch) -> Tensor:
    """The flattened head-input feature vector, [batch, n]."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 4 or tuple(x.shape[1:]) != model.config.input_shape:
        raise DimensionError(
            f"batch shape {tuple(x.shape)} does not match configured input "
            f"{model.config.input_shape}"
        )
    cfg = model.config
    for kernel, s, p in zip(model.conv_kernels, cfg.strides, cfg.paddings):
        x = relu(conv2d_forward(x, kernel, stride=s, padding=p))
    if cfg.pool == POOL_GAP:
        return global_average_pool(x)
    return flatten(x)


def head_forward(model: Model, features: Tensor) -> Tensor:
    """Logits from head-input features: the fully connected layer alone."""
    return linear_forward(features, model.fc_weight, model.fc_bias)


def forward(model: Model, batch) -> Tensor:
    """Logits for a batch of images, [batch, num_classes]."""
    return head_forward(model, extract_features(model, batch))


def frozen_head(model: Model):
    """Head closure over copied weights: gradients reach only its input."""
    weight = Tensor(model.fc_weight.data.copy())
    bias = Tensor(model.fc_bias.data.copy())

    def head(features: Tensor) -> Tensor:
        return linear_forward(features, weight, bias)

    return head


# --- checkpoint I/O -------------------------------------------------------


def _write_name(fh: BinaryIO, name: str) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)


def _read_exact(fh: BinaryIO, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_name(fh: BinaryIO) -> str:
    (length,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
    return _read_exact(fh, length, "name").decode("utf-8")


def save_checkpoint(model: Model, path, adam_state=None) -> None:
    """Write parameters (and optionally optimizer state) to ``path``."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        params = model.parameters()
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, param in params.items():
            _write_name(fh, name)
            fh.write(struct.pack("<B", param.data.ndim))
            for dim in param.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(param.data, dtype="<f4").tobytes())
        if adam_state is not None:
            fh.write(ADAM_MAGIC)
            fh.write(struct.pack("<Q", adam_state.t))
            fh.write(
                struct.pack(
                    "<dddd", adam_state.lr, adam_state.beta1, adam_state.beta2, adam_state.eps
                )
            )
            fh.write(struct.pack("<I", len(adam_state.m)))
            for name, m in adam_state.m.items():
                _write_name(fh, name)
                fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(adam_state.v[name], dtype="<f8").tobytes())


def _read_param_block(fh: BinaryIO) -> dict[str, np.ndarray]:
    magic = _read_exact(fh, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = _read_name(fh)
        (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"dims of {name}"))
        size = int(np.prod(dims)) if dims else 1
        raw = _read_exact(fh, 4 * size, f"data of {name}")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return params


def load_checkpoint(path, config: BackboneConfig) -> Model:
    """Rebuild a model from ``config`` and fill its parameters from ``path``.

    Every stored parameter must match the configured model by name and
    shape; anything else is reported as a corrupt or mismatched checkpoint.
    """
    with open(path, "rb") as fh:
        stored = _read_param_block(fh)
    model = build(config)
    expected = model.parameters()
    if set(stored) != set(expected):
        raise CheckpointError(
            f"checkpoint parameters {sorted(stored)} do not match model parameters {sorted(expected)}"
        )
    for name, param in expected.items():
        if stored[name].shape != param.data.shape:
            raise CheckpointError(
                f"parameter {name}: checkpoint shape {stored[name].shape} does not "
                f"match configured shape {param.data.shape}"
            )
        param.data[...] = stored[name]
    return model


def load_adam_state(path):
    """The bundled optimizer state, or None when the file carries none."""
    from .update import AdamState

    with open(path, "rb") as fh:
        params = _read_param_block(fh)
        magic = fh.read(4)
        if not magic:
            return None
        if magic != ADAM_MAGIC:
            raise CheckpointError(f"bad optimizer-state magic {magic!r}, expected {ADAM_MAGIC!r}")
        (t,) = struct.unpack("<Q", _read_exact(fh, 8, "step counter"))
        lr, beta1, beta2, eps = struct.unpack("<dddd", _read_exact(fh, 32, "hyperparameters"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "state count"))
        state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.t = t
        for _ in range(count):
            name = _read_name(fh)
            if name not in params:
                raise CheckpointError(f"optimizer state for unknown parameter {name!r}")
            size = params[name].size
            m_raw = _read_exact(fh, 8 * size, f"first moment of {name}")
            v_raw = _read_exact(fh, 8 * size, f"second moment of {name}")
            state.m[name] = np.frombuffer(m_raw, dtype="<f8").reshape(params[name].shape).copy()
            state.v[name] = np.frombuffer(v_raw, dtype="<f8").reshape(params[name].shape).copy()
        return state

"""Gradient-based Shapley attribution over head-input features.

Attributions are Monte Carlo estimates along noisy linear paths between a
background sample and the target: per draw, a background row and an
interpolation coefficient are sampled, optional Gaussian noise is added to
the interpolated point, the gradient of the chosen class logit is taken at
that point, and the gradient is weighted by the target-minus-background
displacement. Draws are averaged in a fixed order, so a fixed seed gives
bit-identical results.

The per-sample raw matrices are reduced by mean-then-absolute-value, then
min-max normalized over the whole matrix to [0, 1]; a constant matrix
normalizes to all ones, meaning every feature is treated as equally
important and scaling becomes a no-op.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .model import Model, frozen_head
from .tensor import Tensor, backward, multiply, sum_all

STAGE_RAW = "raw"
STAGE_REDUCED = "reduced"
STAGE_NORMALIZED = "normalized"


@dataclass(frozen=True)
class ShapConfig:
    num_path_samples: int = 64
    noise_std: float = 0.0
    background_size: int = 16
    seed: int = 0
    abs_before_mean: bool = False

    def validate(self) -> None:
        if self.num_path_samples < 1:
            raise ConfigError(f"num_path_samples must be >= 1, got {self.num_path_samples}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.background_size < 1:
            raise ConfigError(f"background_size must be >= 1, got {self.background_size}")


@dataclass
class ImportanceMatrix:
    """Per-feature, per-class importance values, shaped (n, k)."""

    values: np.ndarray
    stage: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"importance matrix must be 2-d, got shape {self.values.shape}")
        if self.stage == STAGE_REDUCED and np.any(self.values < 0):
            raise ContractError("reduced importance matrices are non-negative")
        if self.stage == STAGE_NORMALIZED and (
            np.any(self.values < 0) or np.any(self.values > 1)
        ):
            raise ContractError("normalized importance matrices live in [0, 1]")


def unit_scale(values) -> np.ndarray:
    """Global min-max map onto [0, 1]; a constant input maps to all ones."""
    v = np.asarray(values, dtype=np.float64)
    lo = v.min()
    hi = v.max()
    if hi == lo:
        return np.ones_like(v)
    return (v - lo) / (hi - lo)


def gradient_shap(model, targets, background, cfg: ShapConfig) -> list[np.ndarray]:
    """Raw attribution matrices, one (n, k) float64 matrix per target row.

    ``model`` is either a frozen Model (its head is used) or any callable
    mapping a feature Tensor [batch, n] to logits [batch, k] built from
    engine operations. The callable must not mutate captured parameters;
    gradients here flow only to the path points.
    """
    cfg.validate()
    head = frozen_head(model) if isinstance(model, Model) else model
    targets = np.ascontiguousarray(
        targets.data if isinstance(targets, Tensor) else targets, dtype=np.float32
    )
    background = np.ascontiguousarray(
        background.data if isinstance(background, Tensor) else background, dtype=np.float32
    )
    if background.ndim != 2 or background.shape[0] < 1:
        raise ConfigError("background must be a non-empty [samples, features] matrix")
    if targets.ndim != 2:
        raise DimensionError(f"targets must be [samples, features], got shape {targets.shape}")
    if targets.shape[1] != background.shape[1]:
        raise DimensionError(
            f"feature width mismatch: targets {targets.shape} vs background {background.shape}"
        )

    n = targets.shape[1]
    num_classes = head(Tensor(background[:1])).shape[1]
    rng = np.random.default_rng(cfg.seed)
    draws = cfg.num_path_samples

    results = []
    for a in targets:
        ref = background[rng.integers(0, background.shape[0], size=draws)]
        alphas = rng.random(draws).astype(np.float64)
        noise = rng.normal(0.0, cfg.noise_std, size=(draws, n))
        points = (
            ref.astype(np.float64)
            + alphas[:, None] * (a.astype(np.float64)[None, :] - ref.astype(np.float64))
            + noise
        ).astype(np.float32)
        displacement = a.astype(np.float64)[None, :] - ref.astype(np.float64)

        phi = np.empty((n, num_classes), dtype=np.float64)
        for j in range(num_classes):
            inp = Tensor(points, requires_grad=True)
            logits = head(inp)
            mask = np.zeros(logits.shape, dtype=np.float32)
            mask[:, j] = 1.0
            backward(sum_all(multiply(logits, Tensor(mask))))
            phi[:, j] = np.mean(inp.grad.astype(np.float64) * displacement, axis=0)
        results.append(phi)
    return results


def batch_mean_abs(samples: list[np.ndarray], abs_before_mean: bool = False) -> ImportanceMatrix:
    """Reduce raw per-sample matrices: mean over samples, then absolute value.

    ``abs_before_mean`` swaps the order (mean of absolute values), which
    avoids sign cancellation across samples; off by default.
    """
    if not samples:
        raise ContractError("batch_mean_abs requires at least one sample matrix")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    if stack.ndim != 3:
        raise DimensionError("sample matrices must all be 2-d and equal-shaped")
    if abs_before_mean:
        reduced = np.abs(stack).mean(axis=0)
    else:
        reduced = np.abs(stack.mean(axis=0))
    return ImportanceMatrix(reduced, STAGE_REDUCED)


def minmax_normalize(matrix: ImportanceMatrix) -> ImportanceMatrix:
    """Whole-matrix min-max scaling to [0, 1]; constant input becomes all ones."""
    if matrix.stage != STAGE_REDUCED:
        raise ContractError(f"minmax_normalize expects a reduced matrix, got stage {matrix.stage!r}")
    return ImportanceMatrix(unit_scale(matrix.values), STAGE_NORMALIZED)


def write_importance_csv(path, raw_samples: list[np.ndarray], reduced: ImportanceMatrix, normalized: ImportanceMatrix) -> None:
    """One row per (feature, class): signed raw mean, reduced, normalized."""
    raw_mean = np.stack([np.asarray(s, dtype=np.float64) for s in raw_samples]).mean(axis=0)
    n, k = raw_mean.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_index", "class_index", "s_raw_mean", "s_prime", "s_star"])
        for i in range(n):
            for j in range(k):
                writer.writerow(
                    [
                        i,
                        j,
                        format(raw_mean[i, j], ".10g"),
                        format(reduced.values[i, j], ".10g"),
                        format(normalized.values[i, j], ".10g"),
                    ]
                )

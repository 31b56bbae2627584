"""Weight-update rules: cross-entropy, Adam, and importance scaling.

The head's weight matrix is multiplied elementwise by the importance
matrix (each weight scaled by its feature-and-class importance); written
as a matrix product the shapes would not compose, and elementwise scaling
is what feature selection means here. Scaling cadence is configurable:

* ``per_epoch`` (default): the head weights are rescaled once whenever the
  importance matrix is refreshed, and optimizer steps in between are plain
  Adam. This is the stable mode.
* ``per_step``: every optimizer step first rescales the head weights, then
  applies the Adam delta. Repeated multiplication by values below one
  drives the affected weights toward zero geometrically, so this mode is
  mainly useful for studying the un-damped rule.

Adam moments are kept in float64 regardless of parameter precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError
from .model import Model, forward
from .shap import STAGE_NORMALIZED, ImportanceMatrix, unit_scale
from .tensor import Tensor, backward, from_op, softmax

PER_EPOCH = "per_epoch"
PER_STEP = "per_step"
CADENCES = (PER_EPOCH, PER_STEP)

PROB_CLAMP = 1e-12


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers and a shared step counter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class BlendConfig:
    lam: float = 1.0
    scale_cadence: str = PER_EPOCH

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.scale_cadence not in CADENCES:
            raise ConfigError(f"scale_cadence must be one of {CADENCES}, got {self.scale_cadence!r}")


def cross_entropy(targets, probabilities: Tensor) -> Tensor:
    """Mean over the batch of -sum(y * log(p)), with p clamped to >= 1e-12.

    ``targets`` must be exactly one-hot rows; probability rows must sum to
    one within 1e-5 (softmax output qualifies).
    """
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float32)
    p = probabilities if isinstance(probabilities, Tensor) else Tensor(probabilities)
    if y.ndim != 2 or p.data.ndim != 2 or y.shape != p.shape:
        raise DimensionError(f"cross_entropy shape mismatch: targets {y.shape} vs probabilities {p.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise ContractError("targets must be exact one-hot rows")
    row_sums = p.data.astype(np.float64).sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-5):
        raise ContractError("probability rows must sum to 1 within 1e-5")

    batch = y.shape[0]
    y64 = y.astype(np.float64)
    p64 = p.data.astype(np.float64)
    clamped = np.maximum(p64, PROB_CLAMP)
    loss = np.array([-(y64 * np.log(clamped)).sum(axis=1).mean()], dtype=np.float32)

    def grad_fn(g: np.ndarray):
        scale = float(g.reshape(-1)[0]) / batch
        dp = np.where(p64 >= PROB_CLAMP, -(y64 / clamped) * scale, 0.0)
        return (dp.astype(np.float32),)

    return from_op("cross_entropy", (p,), loss, grad_fn)


def adam_step(state: AdamState, grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One bias-corrected Adam step over a named gradient set.

    Returns the float64 parameter deltas without applying them; the step
    counter advances exactly once per call.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    deltas: dict[str, np.ndarray] = {}
    for name, g in grads.items():
        g64 = np.asarray(g, dtype=np.float64)
        m_prev = state.m.get(name)
        if m_prev is None:
            m_prev = np.zeros_like(g64)
            v_prev = np.zeros_like(g64)
        else:
            v_prev = state.v[name]
            if m_prev.shape != g64.shape:
                raise DimensionError(
                    f"gradient shape {g64.shape} does not match state shape {m_prev.shape} "
                    f"for parameter {name!r}"
                )
        m = state.beta1 * m_prev + (1.0 - state.beta1) * g64
        v = state.beta2 * v_prev + (1.0 - state.beta2) * g64 * g64
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        deltas[name] = -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return deltas


def apply_importance(weights, importance: ImportanceMatrix) -> np.ndarray:
    """Scale each head weight by its feature-and-class importance.

    weights are (k, n); importance values are (n, k). Entry (j, i) of the
    result is importance[i, j] * weights[j, i], so an all-ones matrix
    leaves the weights bit-identical.
    """
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=np.float32)
    if importance.stage != STAGE_NORMALIZED:
        raise ContractError(
            f"apply_importance requires a normalized importance matrix, got stage {importance.stage!r}"
        )
    if w.ndim != 2 or importance.values.shape != (w.shape[1], w.shape[0]):
        raise DimensionError(
            f"weights {w.shape} and importance {importance.values.shape} are not transpose-compatible"
        )
    return (w.astype(np.float64) * importance.values.T).astype(np.float32)


def normalize_weights(weights) -> np.ndarray:
    """Whole-matrix min-max scaling of the head weights onto [0, 1].

    A constant matrix maps to all ones, mirroring the importance-matrix
    normalization's degenerate branch.
    """
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=np.float64)
    return unit_scale(w)


def blended_scale_matrix(s_star: ImportanceMatrix, w_star: np.ndarray, lam: float) -> ImportanceMatrix:
    """Convex blend of attribution importance and normalized current weights.

    lam=1 returns the importance matrix itself; lam=0 returns the
    transposed normalized weights. The result is usable anywhere a
    normalized importance matrix is.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if s_star.stage != STAGE_NORMALIZED:
        raise ContractError(f"blend requires a normalized importance matrix, got stage {s_star.stage!r}")
    wt = np.asarray(w_star, dtype=np.float64).T
    if wt.shape != s_star.values.shape:
        raise DimensionError(
            f"importance {s_star.values.shape} and transposed weights {wt.shape} disagree"
        )
    blend = lam * s_star.values + (1.0 - lam) * wt
    return ImportanceMatrix(np.clip(blend, 0.0, 1.0), STAGE_NORMALIZED)


def scale_fc_weights(model: Model, importance: ImportanceMatrix) -> None:
    """Rescale the head weights in place (per-refresh application)."""
    model.fc_weight.data[...] = apply_importance(model.fc_weight.data, importance)


def sicdn_step(
    model: Model,
    images,
    targets,
    adam_state: AdamState,
    importance: Optional[ImportanceMatrix] = None,
    cadence: str = PER_EPOCH,
) -> float:
    """One training step; returns the batch loss.

    All parameters receive Adam updates from the cross-entropy gradients.
    Under ``per_step`` cadence the head weight matrix is additionally
    importance-scaled before its delta is added, exactly the multiplicative
    update rule; under ``per_epoch`` the step is plain Adam and scaling
    happens externally at refresh time (see ``scale_fc_weights``).
    """
    if cadence not in CADENCES:
        raise ConfigError(f"cadence must be one of {CADENCES}, got {cadence!r}")
    if cadence == PER_STEP and importance is None:
        raise ContractError("per_step cadence requires a current importance matrix")
    model.zero_grad()
    probabilities = softmax(forward(model, images))
    loss = cross_entropy(targets, probabilities)
    backward(loss)
    grads = {name: p.grad for name, p in model.parameters().items()}
    deltas = adam_step(adam_state, grads)
    for name, param in model.parameters().items():
        if name == "fc_weight" and cadence == PER_STEP:
            base = apply_importance(param.data, importance).astype(np.float64)
        else:
            base = param.data.astype(np.float64)
        param.data[...] = (base + deltas[name]).astype(np.float32)
    return loss.item()

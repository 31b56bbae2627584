"""Dense float32 tensors with tape-style reverse-mode differentiation.

Values are stored and computed in 32-bit floats; reductions (matrix-product
inner loops, softmax denominators, global sums) accumulate in 64-bit before
casting back, which bounds drift at the scales this package targets.

Every operation whose inputs are tracked records a node carrying a monotonic
creation number. ``backward`` replays reachable nodes in exact reverse
creation order, so gradients are bit-identical across runs of the same graph.
The recorded graph is freed once ``backward`` finishes; second-order
derivatives are out of scope.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError, NumericError

_CREATION_COUNTER = itertools.count()

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Node:
    __slots__ = ("seq", "op", "inputs", "grad_fn")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], grad_fn: GradFn):
        self.seq = next(_CREATION_COUNTER)
        self.op = op
        self.inputs = inputs
        self.grad_fn = grad_fn


class Tensor:
    """Dense n-dimensional float32 array with an optional gradient buffer.

    Tensors created with ``requires_grad=True`` are leaves: their ``grad``
    buffer is allocated up front (zeros) and accumulated into by
    ``backward``, so a tensor that never participates in a loss keeps an
    all-zero gradient. Tensors produced by operations carry the recorded
    graph node instead.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data contains non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(arr) if self.requires_grad else None
        )
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._node is not None


def as_tensor(value) -> Tensor:
    """Wrap arrays/lists as constant tensors; pass tensors through."""
    return value if isinstance(value, Tensor) else Tensor(value)


def from_op(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, grad_fn: GradFn) -> Tensor:
    """Build an operation output and record it when any input is tracked.

    Extension point for fused operations defined outside this module:
    ``grad_fn`` receives the upstream gradient and returns one gradient
    array (or None) per input, in order.
    """
    out = Tensor(out_data)
    if any(_tracked(t) for t in inputs):
        out._node = _Node(op, inputs, grad_fn)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    The loss must be a single-element tensor produced by a recorded
    operation. Nodes are replayed in exact reverse creation order and the
    graph is freed afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise ContractError("backward called on a tensor with no recorded graph")

    # Gather every reachable tensor that carries a node.
    produced: list[Tensor] = []
    seen: set[int] = set()
    stack: list[Tensor] = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._node is not None:
            produced.append(t)
            stack.extend(t._node.inputs)
    produced.sort(key=lambda t: t._node.seq, reverse=True)  # type: ignore[union-attr]

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out in produced:
        g = grads.pop(id(out), None)
        if g is None:
            continue
        node = out._node
        assert node is not None
        input_grads = node.grad_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None:
                continue
            if inp.requires_grad:
                inp.grad += ig  # type: ignore[operator]
            elif inp._node is not None:
                acc = grads.get(id(inp))
                grads[id(inp)] = ig if acc is None else acc + ig

    for t in produced:
        t._node = None


# --- operations ---------------------------------------------------------


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: out[i, j] = sum_m weight[j, m] * x[i, m] + bias[j]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(
            f"linear_forward expects x[batch,n], weight[k,n], bias[k]; "
            f"got x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    if x.shape[1] != weight.shape[1] or weight.shape[0] != bias.shape[0]:
        raise DimensionError(
            f"linear_forward shape mismatch: x {x.shape} vs weight {weight.shape}, "
            f"bias {bias.shape}"
        )
    x64 = x.data.astype(np.float64)
    w64 = weight.data.astype(np.float64)
    out64 = x64 @ w64.T + bias.data.astype(np.float64)

    def grad_fn(g: np.ndarray):
        g64 = g.astype(np.float64)
        gx = (g64 @ w64).astype(np.float32)
        gw = (g64.T @ x64).astype(np.float32)
        gb = g64.sum(axis=0).astype(np.float32)
        return gx, gw, gb

    return from_op("linear", (x, weight, bias), out64.astype(np.float32), grad_fn)


def conv2d_forward(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[b,c,h,w] with kernels[f,c,kh,kw], no bias."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise DimensionError(
            f"conv2d_forward expects x[b,c,h,w] and kernels[f,c,kh,kw]; "
            f"got x {x.shape}, kernels {kernels.shape}"
        )
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d_forward: stride {stride} must be >= 1, padding {padding} >= 0")
    b, c, h, w = x.shape
    f, kc, kh, kw = kernels.shape
    if kc != c:
        raise DimensionError(f"conv2d_forward channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d_forward kernel {kernels.shape} larger than padded input "
            f"{(b, c, h + 2 * padding, w + 2 * padding)}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win64 = windows.astype(np.float64)
    k64 = kernels.data.astype(np.float64)
    out64 = np.einsum("bcxyij,fcij->bfxy", win64, k64, optimize=True)

    def grad_fn(g: np.ndarray):
        g64 = g.astype(np.float64)
        gk = np.einsum("bfxy,bcxyij->fcij", g64, win64, optimize=True).astype(np.float32)
        contrib = np.einsum("bfxy,fcij->bcxyij", g64, k64, optimize=True)
        gxp = np.zeros_like(xp, dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                gxp[
                    :, :,
                    i : i + stride * (oh - 1) + 1 : stride,
                    j : j + stride * (ow - 1) + 1 : stride,
                ] += contrib[:, :, :, :, i, j]
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        return gxp.astype(np.float32), gk

    return from_op("conv2d", (x, kernels), out64.astype(np.float32), grad_fn)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def grad_fn(g: np.ndarray):
        return (g * mask,)

    return from_op("relu", (x,), np.where(mask, x.data, np.float32(0.0)), grad_fn)


def softmax(x: Tensor) -> Tensor:
    """Row-stable softmax over the last dimension."""
    x = as_tensor(x)
    x64 = x.data.astype(np.float64)
    shifted = x64 - x64.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out64 = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g: np.ndarray):
        g64 = g.astype(np.float64)
        dot = (g64 * out64).sum(axis=-1, keepdims=True)
        return (((g64 - dot) * out64).astype(np.float32),)

    return from_op("softmax", (x,), out64.astype(np.float32), grad_fn)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    out = np.log(x.data.astype(np.float64)).astype(np.float32)

    def grad_fn(g: np.ndarray):
        return ((g / x.data),)

    return from_op("log", (x,), out, grad_fn)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, operand: Tensor) -> np.ndarray:
    if operand.shape == g.shape:
        return g
    # scalar operand against a full-shape gradient: 64-bit total
    total = np.asarray(g, dtype=np.float64).sum()
    return np.full(operand.shape, total, dtype=np.float32)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)

    def grad_fn(g: np.ndarray):
        return _reduce_to(g, a), _reduce_to(g, b)

    return from_op("add", (a, b), a.data + b.data, grad_fn)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("multiply", a, b)
    with np.errstate(over="ignore"):
        out = a.data * b.data
    if not np.all(np.isfinite(out)):
        raise NumericError("multiply overflowed to non-finite values")

    def grad_fn(g: np.ndarray):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return from_op("multiply", (a, b), out, grad_fn)


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over the spatial dimensions: [b,c,h,w] -> [b,c]."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"global_average_pool expects [b,c,h,w], got {x.shape}")
    _, _, h, w = x.shape
    out = x.data.astype(np.float64).mean(axis=(2, 3)).astype(np.float32)

    def grad_fn(g: np.ndarray):
        scaled = g / np.float32(h * w)
        return (np.broadcast_to(scaled[:, :, None, None], x.shape).astype(np.float32),)

    return from_op("gap", (x,), out, grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}: {exc}") from None

    def grad_fn(g: np.ndarray):
        return (g.reshape(x.shape),)

    return from_op("reshape", (x,), np.ascontiguousarray(out), grad_fn)


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten of all trailing dimensions: [b, ...] -> [b, m]."""
    x = as_tensor(x)
    if x.data.ndim < 2:
        raise DimensionError(f"flatten expects at least 2 dimensions, got {x.shape}")
    return reshape(x, (x.shape[0], -1))


def sum_all(x: Tensor) -> Tensor:
    """Total of all entries as a single-element tensor (64-bit accumulate)."""
    x = as_tensor(x)
    out = np.array([x.data.astype(np.float64).sum()], dtype=np.float32)

    def grad_fn(g: np.ndarray):
        return (np.full(x.shape, g.reshape(-1)[0], dtype=np.float32),)

    return from_op("sum_all", (x,), out, grad_fn)


def mean_all(x: Tensor) -> Tensor:
    """Mean of all entries as a single-element tensor (64-bit accumulate)."""
    x = as_tensor(x)
    out = np.array([x.data.astype(np.float64).mean()], dtype=np.float32)

    def grad_fn(g: np.ndarray):
        return (np.full(x.shape, g.reshape(-1)[0] / np.float32(x.size), dtype=np.float32),)

    return from_op("mean_all", (x,), out, grad_fn)

"""Shared oracles for the test suite.

The gradient oracles here are independent 64-bit implementations of each
operation (explicit loops where affordable) used for central finite
differences, so the engine's analytic gradients are checked against a path
they do not share.
"""

import numpy as np
import pytest


# --- 64-bit shadow forward implementations -------------------------------


def shadow_linear(x, w, b):
    batch, n = x.shape
    k = w.shape[0]
    out = np.zeros((batch, k), dtype=np.float64)
    for i in range(batch):
        for j in range(k):
            acc = 0.0
            for m in range(n):
                acc += w[j, m] * x[i, m]
            out[i, j] = acc + b[j]
    return out


def shadow_conv2d(x, kernels, stride=1, padding=0):
    b, c, h, w = x.shape
    f, _, kh, kw = kernels.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((b, f, oh, ow), dtype=np.float64)
    for bi in range(b):
        for fi in range(f):
            for oi in range(oh):
                for oj in range(ow):
                    patch = xp[bi, :, oi * stride : oi * stride + kh, oj * stride : oj * stride + kw]
                    out[bi, fi, oi, oj] = np.sum(patch * kernels[fi])
    return out


def shadow_relu(x):
    return np.where(x > 0, x, 0.0)


def shadow_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def shadow_gap(x):
    return x.mean(axis=(2, 3))


def shadow_flatten(x):
    return x.reshape(x.shape[0], -1)


# --- finite-difference harness -------------------------------------------


def central_differences(scalar_fn, arrays, h=1e-3):
    """d(scalar_fn)/d(entry) for every entry of every array, via +/- h probes."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = scalar_fn(arrays)
            flat[i] = orig - h
            lo = scalar_fn(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, fd):
    """Elementwise relative error, floored at 1% of the gradient's own scale.

    The floor keeps accidental near-zero entries from dividing rounding
    noise by ~0; entries at the gradient's scale are compared strictly.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(np.abs(fd).max(), 1e-8)
    denom = np.maximum(np.abs(fd), 0.01 * scale)
    return float(np.max(np.abs(analytic - fd) / denom))


def run_gradient_check(build_loss, shadow_scalar, arrays, rtol=1e-4, h=1e-3):
    """Compare engine gradients against 64-bit central differences.

    build_loss: callable taking engine tensors, returning the scalar loss.
    shadow_scalar: callable taking the list of float64 arrays, returning the
        same scalar computed by the independent 64-bit path.
    arrays: float64 input arrays; they are quantized to float32 first so both
        paths differentiate the same function at the same point.
    """
    from sicdn.tensor import Tensor, backward

    arrays = [np.ascontiguousarray(a.astype(np.float32), dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    backward(loss)
    fd = central_differences(shadow_scalar, arrays, h=h)
    worst = 0.0
    for t, g in zip(tensors, fd):
        worst = max(worst, max_relative_error(t.grad, g))
    assert worst < rtol, f"gradient mismatch: max relative error {worst:.3e} >= {rtol}"
    return worst


def reference_adam(grads_sequence, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent 64-bit Adam with the bias correction folded into the rate.

    Uses the algebraically equivalent form
    delta = -lr * sqrt(1 - b2^t) / (1 - b1^t) * m / (sqrt(v) + eps * sqrt(1 - b2^t))
    so it exercises a different floating-point path than the implementation.
    """
    import math

    m = np.zeros_like(grads_sequence[0], dtype=np.float64)
    v = np.zeros_like(grads_sequence[0], dtype=np.float64)
    deltas = []
    for t, g in enumerate(grads_sequence, start=1):
        g = np.asarray(g, dtype=np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        correction = math.sqrt(1 - beta2**t)
        rate = lr * correction / (1 - beta1**t)
        deltas.append(-rate * m / (np.sqrt(v) + eps * correction))
    return deltas


def _away_from_kink(x, margin=0.02):
    x = np.where(np.abs(x) < margin, margin, x)
    return x


def op_gradient_case(name, rng):
    """One random gradient-check instance for the named engine op.

    Returns (build_loss, shadow_scalar, arrays): the engine-side loss
    builder, the independent 64-bit scalar, and the input arrays. The loss
    projects the op output through a fixed random functional.
    """
    from sicdn import tensor as T

    def projected(op_engine, op_shadow, arrays, out_shape):
        r = rng.standard_normal(out_shape)

        def build_loss(*tensors):
            return T.sum_all(T.multiply(op_engine(*tensors), T.Tensor(r)))

        def shadow_scalar(arrs):
            return float((op_shadow(*arrs) * r).sum())

        return build_loss, shadow_scalar, arrays

    if name == "linear":
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((2, 4))
        b = rng.standard_normal(2)
        return projected(T.linear_forward, shadow_linear, [x, w, b], (3, 2))
    if name == "conv2d":
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        x = rng.standard_normal((1, 2, 4, 4))
        k = rng.standard_normal((2, 2, 2, 2))
        oh = (4 + 2 * padding - 2) // stride + 1
        return projected(
            lambda xt, kt: T.conv2d_forward(xt, kt, stride=stride, padding=padding),
            lambda xa, ka: shadow_conv2d(xa, ka, stride=stride, padding=padding),
            [x, k],
            (1, 2, oh, oh),
        )
    if name == "relu":
        x = _away_from_kink(rng.standard_normal((3, 4)))
        return projected(T.relu, shadow_relu, [x], (3, 4))
    if name == "softmax":
        x = rng.standard_normal((3, 4))
        return projected(T.softmax, shadow_softmax, [x], (3, 4))
    if name == "log":
        x = rng.uniform(0.5, 2.0, (3, 4))
        return projected(T.log, np.log, [x], (3, 4))
    if name == "add":
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((3, 4))
        return projected(T.add, lambda p, q: p + q, [a, b], (3, 4))
    if name == "multiply":
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((3, 4))
        return projected(T.multiply, lambda p, q: p * q, [a, b], (3, 4))
    if name == "multiply_scalar":
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal(1)
        return projected(T.multiply, lambda p, q: p * q, [a, b], (3, 4))
    if name == "global_average_pool":
        x = rng.standard_normal((2, 3, 4, 4))
        return projected(T.global_average_pool, shadow_gap, [x], (2, 3))
    if name == "flatten":
        x = rng.standard_normal((2, 3, 4))
        return projected(T.flatten, shadow_flatten, [x], (2, 12))
    if name == "sum_all":
        x = rng.standard_normal((3, 4))
        return projected(T.sum_all, lambda a: np.array([a.sum()]), [x], (1,))
    if name == "mean_all":
        x = rng.standard_normal((3, 4))
        return projected(T.mean_all, lambda a: np.array([a.mean()]), [x], (1,))
    raise KeyError(name)


GRAD_CHECKED_OPS = (
    "linear",
    "conv2d",
    "relu",
    "softmax",
    "log",
    "add",
    "multiply",
    "multiply_scalar",
    "global_average_pool",
    "flatten",
    "sum_all",
    "mean_all",
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)

"""Forward kernels and hand-derived backward kernels.

All kernels are pure functions over float64 numpy arrays: same inputs give
bit-identical outputs, and nothing here holds shared mutable state. Each
``*_backward`` returns the exact adjoint of its forward; callers own the
accumulation into parameter gradient buffers.

``grad_check`` verifies any (forward, vjp) pair against central finite
differences through a fixed random linear functional.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError
from .tensor import ConvSpec


def conv1d_forward(x: np.ndarray, spec: ConvSpec, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Dilated 1D convolution with same zero-padding.

    out[o, t] = bias[o] + sum_{i,j} weight[o, i, j] * padded(x)[i, t + j*dilation]
    """
    if x.ndim != 2 or x.shape[0] != spec.in_channels:
        raise ShapeError("conv1d_forward", "in_channels", spec.in_channels, x.shape)
    if weight.shape != spec.weight_shape:
        raise ShapeError("conv1d_forward", "weight", spec.weight_shape, weight.shape)
    if bias.shape != (spec.out_channels,):
        raise ShapeError("conv1d_forward", "bias", (spec.out_channels,), bias.shape)
    length = x.shape[1]
    pad = spec.padding
    xp = np.zeros((spec.in_channels, length + 2 * pad))
    xp[:, pad:pad + length] = x
    out = np.empty((spec.out_channels, length))
    out[:] = bias[:, None]
    for j in range(spec.kernel_size):
        lo = j * spec.dilation
        out += weight[:, :, j] @ xp[:, lo:lo + length]
    return out


def conv1d_backward(
    grad_out: np.ndarray, saved_input: np.ndarray, spec: ConvSpec, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoints of conv1d_forward: (grad_input, grad_weight, grad_bias)."""
    length = saved_input.shape[1]
    if grad_out.shape != (spec.out_channels, length):
        raise ShapeError("conv1d_backward", "grad_out", (spec.out_channels, length), grad_out.shape)
    pad = spec.padding
    xp = np.zeros((spec.in_channels, length + 2 * pad))
    xp[:, pad:pad + length] = saved_input
    grad_weight = np.empty_like(weight)
    grad_xp = np.zeros_like(xp)
    for j in range(spec.kernel_size):
        lo = j * spec.dilation
        grad_weight[:, :, j] = grad_out @ xp[:, lo:lo + length].T
        grad_xp[:, lo:lo + length] += weight[:, :, j].T @ grad_out
    grad_bias = grad_out.sum(axis=1)
    grad_input = grad_xp[:, pad:pad + length] if pad else grad_xp
    return grad_input, grad_weight, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, saved_input: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return grad_out * (saved_input > 0.0)


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic, branch on sign so exp never overflows."""
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out: np.ndarray, saved_output: np.ndarray) -> np.ndarray:
    return grad_out * saved_output * (1.0 - saved_output)


def softmax_channels_forward(z: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis of an N x T map, per temporal location.

    Max-subtraction keeps the exponentials bounded; every output column
    sums to 1.
    """
    if z.ndim != 2 or z.shape[0] < 2:
        raise ShapeError("softmax_channels_forward", "channels", ">=2 channels (N,T)", z.shape)
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def softmax_channels_backward(grad_out: np.ndarray, saved_output: np.ndarray) -> np.ndarray:
    # per-column Jacobian-vector product: m * (g - <g, m>)
    inner = (grad_out * saved_output).sum(axis=0, keepdims=True)
    return saved_output * (grad_out - inner)


def channel_pool_forward(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-location average and maximum over the channel axis, each 1 x T."""
    if f.ndim != 2 or f.shape[0] < 1:
        raise ShapeError("channel_pool_forward", "channels", "(C,T) with C>=1", f.shape)
    avg = f.mean(axis=0, keepdims=True)
    mx = f.max(axis=0, keepdims=True)
    return avg, mx


def channel_pool_backward(
    grad_avg: np.ndarray, grad_max: np.ndarray, saved_input: np.ndarray
) -> np.ndarray:
    """Average spreads its gradient uniformly; max routes to the first
    (lowest-index) argmax channel."""
    channels, length = saved_input.shape
    grad = np.broadcast_to(grad_avg / channels, saved_input.shape).copy()
    arg = saved_input.argmax(axis=0)
    grad[arg, np.arange(length)] += grad_max[0]
    return grad


def temporal_maxpool_forward(
    x: np.ndarray, window: int, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Max pooling over the temporal axis; returns (output, argmax indices).

    Windows start at multiples of ``stride``; the last window may be
    truncated at the right edge. Output length is ceil(T / stride).
    """
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    channels, length = x.shape
    if length < window:
        raise ShapeError("temporal_maxpool_forward", "time", f">= window {window}", length)
    n_out = -(-length // stride)
    starts = np.arange(n_out) * stride
    idx = starts[:, None] + np.arange(window)[None, :]
    valid = idx < length
    vals = x[:, np.minimum(idx, length - 1)]
    vals = np.where(valid[None, :, :], vals, -np.inf)
    arg = vals.argmax(axis=2)  # first occurrence wins ties
    out = np.take_along_axis(vals, arg[:, :, None], axis=2)[:, :, 0]
    argmax_idx = starts[None, :] + arg
    return out, argmax_idx


def temporal_maxpool_backward(
    grad_out: np.ndarray, argmax_idx: np.ndarray, input_shape: tuple[int, int]
) -> np.ndarray:
    """Routes each output gradient to its saved argmax location."""
    channels, _ = input_shape
    grad = np.zeros(input_shape)
    rows = np.arange(channels)[:, None]
    np.add.at(grad, (np.broadcast_to(rows, argmax_idx.shape), argmax_idx), grad_out)
    return grad


# An op under test maps a list of input arrays to (output, vjp) where
# vjp(grad_out) returns one gradient array per input.
GradCheckOp = Callable[[list[np.ndarray]], tuple[np.ndarray, Callable[[np.ndarray], list[np.ndarray]]]]


def grad_check(
    op: GradCheckOp,
    input_shapes: Sequence[tuple[int, ...]],
    seed: int,
    eps: float = 1e-5,
    name: str | None = None,
) -> float:
    """Compare an op's analytic gradients against central finite differences.

    The op's output is reduced to a scalar through a fixed random linear
    functional; inputs are standard-normal draws from ``seed``. Returns the
    max over all input elements of |analytic - numeric| / max(1, |analytic|).
    """
    op_name = name or getattr(op, "__name__", "op")
    rng = np.random.default_rng(seed)
    inputs = [rng.standard_normal(shape) for shape in input_shapes]
    out, vjp = op([a.copy() for a in inputs])
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(op_name, "forward output")
    probe = rng.standard_normal(out.shape)
    analytic = vjp(probe.copy())
    if len(analytic) != len(inputs):
        raise ValueError(f"{op_name}: vjp returned {len(analytic)} grads for {len(inputs)} inputs")

    def scalar_at(arrays: list[np.ndarray]) -> float:
        value, _ = op(arrays)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op_name, "forward output during finite differencing")
        return float((probe * value).sum())

    worst = 0.0
    for pos, (arr, grad) in enumerate(zip(inputs, analytic)):
        if grad.shape != arr.shape:
            raise ShapeError(op_name, f"vjp[{pos}]", arr.shape, grad.shape)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(op_name, f"analytic gradient of input {pos}")
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            plus = scalar_at(inputs)
            flat[i] = keep - eps
            minus = scalar_at(inputs)
            flat[i] = keep
            numeric = (plus - minus) / (2.0 * eps)
            rel = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            if rel > worst:
                worst = rel
    return worst

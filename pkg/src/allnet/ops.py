"""Differentiable primitive operations over (N, C, H, W) tensors.

Forward ops are pure functions; each has a matching backward returning the
analytic gradients of its inputs and parameters. Gradients come back in the
dtype of the corresponding forward array, accumulated in float64 internally.
Hot loops (conv, pooling) dispatch through the selected kernel backend.
"""

from __future__ import annotations

import numpy as np

from .backend import kernels as _k
from .tensor import (
    ConvParams,
    DegenerateOutputError,
    DenseParams,
    ShapeError,
    check_tensor,
)


def _pad_input(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Cross-correlate ``x`` with the kernel and add the per-channel bias.

    Output shape is (N, out_c, (H+2p-kH)//s+1, (W+2p-kW)//s+1).
    """
    check_tensor(x)
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"input channels {x.shape} do not match kernel {params.kernel.shape}"
        )
    params.out_hw(x.shape[2], x.shape[3])
    return _k.conv2d_fwd(_pad_input(x, params.padding), params.kernel, params.bias, params.stride)


def conv2d_backward(
    x: np.ndarray, params: ConvParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. input, kernel and bias."""
    check_tensor(x)
    check_tensor(grad_out, "grad_out")
    out_h, out_w = params.out_hw(x.shape[2], x.shape[3])
    expected = (x.shape[0], params.out_channels, out_h, out_w)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {expected}")
    xp = _pad_input(x, params.padding)
    gxp, gk, gb = _k.conv2d_bwd(xp, params.kernel, grad_out, params.stride)
    p = params.padding
    if p > 0:
        gxp = np.ascontiguousarray(gxp[:, :, p:-p, p:-p])
    return gxp, gk, gb


def maxpool2d(
    x: np.ndarray, window: int, stride: int, padding: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Max over square windows. Returns (output, argmax map).

    The argmax map holds, per output element, the flat index into ``x`` of the
    winning element (first occurrence on ties, scanning the window row-major).
    Padding is virtual: padded cells never win and indices stay in input
    coordinates.
    """
    check_tensor(x)
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    if padding < 0 or 2 * padding > window:
        raise ValueError(f"padding must satisfy 0 <= 2*padding <= window, got {padding}")
    h, w = x.shape[2], x.shape[3]
    out_h = (h + 2 * padding - window) // stride + 1
    out_w = (w + 2 * padding - window) // stride + 1
    if out_h < 1 or out_w < 1:
        raise DegenerateOutputError(
            f"pool window {window} exceeds padded extent of {h}x{w} input (padding {padding})"
        )
    return _k.maxpool_fwd(x, window, stride, padding)


def maxpool2d_backward(arg: np.ndarray, grad_out: np.ndarray, x_shape: tuple) -> np.ndarray:
    """Route each grad_out element to its recorded source index, summing overlaps."""
    if arg.shape != grad_out.shape:
        raise ShapeError(f"argmax map shape {arg.shape} does not match grad_out {grad_out.shape}")
    if len(x_shape) != 4:
        raise ShapeError(f"x_shape must be rank 4, got {x_shape}")
    return _k.maxpool_bwd(arg, grad_out, tuple(int(d) for d in x_shape))


def adaptive_maxpool2d(x: np.ndarray, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Max pool to a fixed (out_h, out_w) grid; windows derive from input size.

    Cell (i, j) covers rows [floor(i*H/out_h), ceil((i+1)*H/out_h)) and the
    analogous columns, so any input size maps onto the target grid. Backward is
    `maxpool2d_backward` on the returned argmax map.
    """
    check_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target grid must be >= 1x1, got {out_h}x{out_w}")
    return _k.adaptive_maxpool_fwd(x, out_h, out_w)


def concat_channels(inputs) -> np.ndarray:
    """Concatenate along the channel axis; all inputs must share N, H, W."""
    if len(inputs) == 0:
        raise ShapeError("concat_channels needs at least one input")
    first = inputs[0]
    check_tensor(first, "input 0")
    for i, x in enumerate(inputs[1:], start=1):
        check_tensor(x, f"input {i}")
        same = (
            x.shape[0] == first.shape[0]
            and x.shape[2] == first.shape[2]
            and x.shape[3] == first.shape[3]
        )
        if not same:
            raise ShapeError(
                f"concat input {i} has shape {x.shape}, incompatible with input 0 {first.shape}"
            )
    if len(inputs) == 1:
        return first.copy()
    return np.concatenate(inputs, axis=1)


def concat_channels_backward(grad_out: np.ndarray, channel_sizes) -> list[np.ndarray]:
    """Split grad_out back into per-input pieces at the channel boundaries."""
    total = int(sum(channel_sizes))
    if grad_out.shape[1] != total:
        raise ShapeError(
            f"grad_out has {grad_out.shape[1]} channels, expected {total}"
        )
    pieces, start = [], 0
    for c in channel_sizes:
        pieces.append(np.ascontiguousarray(grad_out[:, start : start + c]))
        start += c
    return pieces


def elementwise_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    check_tensor(a, "a")
    check_tensor(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"add operands differ: {a.shape} vs {b.shape}")
    return a + b


def relu(x: np.ndarray) -> np.ndarray:
    check_tensor(x)
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if x.shape != grad_out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match input {x.shape}")
    return grad_out * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    check_tensor(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward from the forward *output* y = sigmoid(x)."""
    if y.shape != grad_out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {y.shape}")
    return y * (1.0 - y) * grad_out


def dense(x: np.ndarray, params: DenseParams) -> np.ndarray:
    """Affine map over the flattened per-sample input; output (N, out_units, 1, 1)."""
    check_tensor(x)
    n = x.shape[0]
    flat = x.reshape(n, -1)
    if flat.shape[1] != params.in_units:
        raise ShapeError(
            f"flattened input length {flat.shape[1]} (from {x.shape}) does not match "
            f"weights {params.weights.shape}"
        )
    y = flat.astype(np.float64) @ params.weights.T.astype(np.float64) + params.bias.astype(
        np.float64
    )
    return np.ascontiguousarray(y.astype(x.dtype)).reshape(n, params.out_units, 1, 1)


def dense_backward(
    x: np.ndarray, params: DenseParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of dense w.r.t. input, weights and bias."""
    n = x.shape[0]
    expected = (n, params.out_units, 1, 1)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {expected}")
    flat = x.reshape(n, -1).astype(np.float64)
    gy = grad_out.reshape(n, -1).astype(np.float64)
    gw = gy.T @ flat
    gb = gy.sum(axis=0)
    gx = gy @ params.weights.astype(np.float64)
    return (
        np.ascontiguousarray(gx.astype(x.dtype)).reshape(x.shape),
        gw.astype(params.weights.dtype),
        gb.astype(params.weights.dtype),
    )

"""Pure-numpy kernels: the fallback path when numba is unavailable or disabled.

Same surface as `kernels_numba`. Convolutions run as im2col matmuls with
float64 accumulation; pooling uses window views plus argmax. Callers hand in
already-padded inputs for conv; pooling handles its own virtual padding so
argmax indices stay in unpadded input coordinates.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(xp: np.ndarray, k_h: int, k_w: int, stride: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N*out_h*out_w, C*k_h*k_w) float64 patch matrix."""
    windows = sliding_window_view(xp, (k_h, k_w), axis=(2, 3))[:, :, ::stride, ::stride]
    n_b, in_c, out_h, out_w = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n_b * out_h * out_w, -1)
    return cols.astype(np.float64)


def conv2d_fwd(xp: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    n_b = xp.shape[0]
    out_c, _, k_h, k_w = kernel.shape
    out_h = (xp.shape[2] - k_h) // stride + 1
    out_w = (xp.shape[3] - k_w) // stride + 1
    cols = _im2col(xp, k_h, k_w, stride)
    flat_k = kernel.reshape(out_c, -1).astype(np.float64)
    y = cols @ flat_k.T + bias.astype(np.float64)
    y = y.reshape(n_b, out_h, out_w, out_c).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y.astype(xp.dtype))


def conv2d_bwd(
    xp: np.ndarray, kernel: np.ndarray, gy: np.ndarray, stride: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. padded input, kernel and bias for `conv2d_fwd`."""
    n_b, in_c = xp.shape[0], xp.shape[1]
    out_c, _, k_h, k_w = kernel.shape
    out_h, out_w = gy.shape[2], gy.shape[3]

    cols = _im2col(xp, k_h, k_w, stride)
    gy2 = gy.transpose(0, 2, 3, 1).reshape(-1, out_c).astype(np.float64)

    gb = gy2.sum(axis=0)
    gk = (gy2.T @ cols).reshape(kernel.shape)

    flat_k = kernel.reshape(out_c, -1).astype(np.float64)
    gpatches = (gy2 @ flat_k).reshape(n_b, out_h, out_w, in_c, k_h, k_w)
    gxp = np.zeros(xp.shape, dtype=np.float64)
    for p in range(k_h):
        for q in range(k_w):
            gxp[:, :, p : p + stride * out_h : stride, q : q + stride * out_w : stride] += (
                gpatches[:, :, :, :, p, q].transpose(0, 3, 1, 2)
            )
    return gxp.astype(xp.dtype), gk.astype(kernel.dtype), gb.astype(kernel.dtype)


def _pool_grids(n_b, n_c, h, w, out_h, out_w):
    n_idx = np.arange(n_b)[:, None, None, None]
    c_idx = np.arange(n_c)[None, :, None, None]
    return n_idx, c_idx


def maxpool_fwd(
    x: np.ndarray, window: int, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    n_b, n_c, h, w = x.shape
    out_h = (h + 2 * pad - window) // stride + 1
    out_w = (w + 2 * pad - window) // stride + 1

    if pad > 0:
        xp = np.full((n_b, n_c, h + 2 * pad, w + 2 * pad), -np.inf, dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    windows = sliding_window_view(xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(n_b, n_c, out_h, out_w, window * window)
    local = flat.argmax(axis=-1)  # first max wins, row-major within the window
    y = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]

    row = np.arange(out_h)[:, None] * stride - pad + (local // window)
    col = np.arange(out_w)[None, :] * stride - pad + (local % window)
    n_idx, c_idx = _pool_grids(n_b, n_c, h, w, out_h, out_w)
    arg = ((n_idx * n_c + c_idx) * h + row) * w + col
    return np.ascontiguousarray(y), np.ascontiguousarray(arg.astype(np.int64))


def adaptive_maxpool_fwd(x: np.ndarray, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Max pool whose per-cell window spans [floor(i*H/oH), ceil((i+1)*H/oH))."""
    n_b, n_c, h, w = x.shape
    y = np.empty((n_b, n_c, out_h, out_w), dtype=x.dtype)
    arg = np.empty((n_b, n_c, out_h, out_w), dtype=np.int64)
    base = (np.arange(n_b)[:, None] * n_c + np.arange(n_c)[None, :]) * (h * w)
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            patch = x[:, :, r0:r1, c0:c1].reshape(n_b, n_c, -1)
            local = patch.argmax(axis=-1)
            y[:, :, i, j] = np.take_along_axis(patch, local[..., None], axis=-1)[..., 0]
            arg[:, :, i, j] = base + (r0 + local // (c1 - c0)) * w + (c0 + local % (c1 - c0))
    return y, arg


def maxpool_bwd(arg: np.ndarray, gy: np.ndarray, x_shape: tuple) -> np.ndarray:
    gx = np.zeros(int(np.prod(x_shape)), dtype=np.float64)
    np.add.at(gx, arg.ravel(), gy.ravel().astype(np.float64))
    return gx.reshape(x_shape).astype(gy.dtype)

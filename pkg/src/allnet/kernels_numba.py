"""Numba-jitted hot kernels: convolution and pooling inner loops.

Each jitted function fills caller-allocated outputs, so allocation and dtype
policy live in the thin wrappers below, shared with the numpy fallback.
Every output element owns a float64 accumulator regardless of storage dtype;
inner loops run over the contiguous output width so the accumulator lanes
stay independent and vectorizable. Parallel loops only ever write disjoint
output slices, so results are bitwise deterministic for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _conv2d_fwd(xp, kernel, bias, stride, out):
    n_b, in_c = xp.shape[0], xp.shape[1]
    out_c, k_h, k_w = kernel.shape[0], kernel.shape[2], kernel.shape[3]
    out_h, out_w = out.shape[2], out.shape[3]
    for idx in prange(n_b * out_c):
        n = idx // out_c
        o = idx % out_c
        acc = np.empty(out_w, np.float64)
        for i in range(out_h):
            for j in range(out_w):
                acc[j] = np.float64(bias[o])
            for c in range(in_c):
                for p in range(k_h):
                    row = i * stride + p
                    for q in range(k_w):
                        kv = np.float64(kernel[o, c, p, q])
                        if stride == 1:  # contiguous reads vectorize
                            for j in range(out_w):
                                acc[j] += np.float64(xp[n, c, row, j + q]) * kv
                        else:
                            for j in range(out_w):
                                acc[j] += np.float64(xp[n, c, row, j * stride + q]) * kv
            for j in range(out_w):
                out[n, o, i, j] = acc[j]


@njit(cache=True, parallel=True)
def _conv2d_bwd_input(kernel, gy, stride, gxp):
    n_b, out_c, out_h, out_w = gy.shape
    in_c, k_h, k_w = kernel.shape[1], kernel.shape[2], kernel.shape[3]
    for n in prange(n_b):
        for o in range(out_c):
            for i in range(out_h):
                for c in range(in_c):
                    for p in range(k_h):
                        row = i * stride + p
                        for q in range(k_w):
                            kv = np.float64(kernel[o, c, p, q])
                            if stride == 1:  # contiguous writes vectorize
                                for j in range(out_w):
                                    gxp[n, c, row, j + q] += np.float64(gy[n, o, i, j]) * kv
                            else:
                                for j in range(out_w):
                                    gxp[n, c, row, j * stride + q] += (
                                        np.float64(gy[n, o, i, j]) * kv
                                    )


@njit(cache=True, parallel=True)
def _conv2d_bwd_params(xp, gy, stride, gk, gb):
    n_b, in_c = xp.shape[0], xp.shape[1]
    out_c, out_h, out_w = gy.shape[1], gy.shape[2], gy.shape[3]
    k_h, k_w = gk.shape[2], gk.shape[3]
    for o in prange(out_c):
        for n in range(n_b):
            for i in range(out_h):
                for j in range(out_w):
                    g = np.float64(gy[n, o, i, j])
                    gb[o] += g
                    col = j * stride
                    for c in range(in_c):
                        for p in range(k_h):
                            row = i * stride + p
                            for q in range(k_w):
                                gk[o, c, p, q] += g * np.float64(xp[n, c, row, col + q])


@njit(cache=True, parallel=True)
def _maxpool_fwd(x, window, stride, pad, out, arg):
    n_b, n_c, h, w = x.shape
    out_h, out_w = out.shape[2], out.shape[3]
    for idx in prange(n_b * n_c):
        n = idx // n_c
        c = idx % n_c
        for i in range(out_h):
            r0 = i * stride - pad
            for j in range(out_w):
                c0 = j * stride - pad
                best = -np.inf
                best_idx = np.int64(-1)
                for p in range(window):
                    row = r0 + p
                    if row < 0 or row >= h:
                        continue
                    for q in range(window):
                        col = c0 + q
                        if col < 0 or col >= w:
                            continue
                        v = np.float64(x[n, c, row, col])
                        if v > best:  # strict: first occurrence wins on ties
                            best = v
                            best_idx = np.int64(((n * n_c + c) * h + row) * w + col)
                out[n, c, i, j] = best
                arg[n, c, i, j] = best_idx


@njit(cache=True, parallel=True)
def _adaptive_maxpool_fwd(x, out, arg):
    n_b, n_c, h, w = x.shape
    out_h, out_w = out.shape[2], out.shape[3]
    for idx in prange(n_b * n_c):
        n = idx // n_c
        c = idx % n_c
        for i in range(out_h):
            r0 = (i * h) // out_h
            r1 = -((-(i + 1) * h) // out_h)
            for j in range(out_w):
                c0 = (j * w) // out_w
                c1 = -((-(j + 1) * w) // out_w)
                best = -np.inf
                best_idx = np.int64(-1)
                for row in range(r0, r1):
                    for col in range(c0, c1):
                        v = np.float64(x[n, c, row, col])
                        if v > best:
                            best = v
                            best_idx = np.int64(((n * n_c + c) * h + row) * w + col)
                out[n, c, i, j] = best
                arg[n, c, i, j] = best_idx


@njit(cache=True, parallel=True)
def _maxpool_bwd(arg, gy, gx_flat):
    n_b, n_c, out_h, out_w = arg.shape
    for idx in prange(n_b * n_c):
        n = idx // n_c
        c = idx % n_c
        for i in range(out_h):
            for j in range(out_w):
                gx_flat[arg[n, c, i, j]] += np.float64(gy[n, c, i, j])


def conv2d_fwd(xp: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    out_c, _, k_h, k_w = kernel.shape
    out_h = (xp.shape[2] - k_h) // stride + 1
    out_w = (xp.shape[3] - k_w) // stride + 1
    y = np.empty((xp.shape[0], out_c, out_h, out_w), dtype=xp.dtype)
    _conv2d_fwd(xp, kernel, bias, stride, y)
    return y


def conv2d_bwd(
    xp: np.ndarray, kernel: np.ndarray, gy: np.ndarray, stride: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    gxp = np.zeros(xp.shape, dtype=np.float64)
    gk = np.zeros(kernel.shape, dtype=np.float64)
    gb = np.zeros(kernel.shape[0], dtype=np.float64)
    _conv2d_bwd_input(kernel, gy, stride, gxp)
    _conv2d_bwd_params(xp, gy, stride, gk, gb)
    return gxp.astype(xp.dtype), gk.astype(kernel.dtype), gb.astype(kernel.dtype)


def maxpool_fwd(
    x: np.ndarray, window: int, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray]:
    out_h = (x.shape[2] + 2 * pad - window) // stride + 1
    out_w = (x.shape[3] + 2 * pad - window) // stride + 1
    y = np.empty((x.shape[0], x.shape[1], out_h, out_w), dtype=x.dtype)
    arg = np.empty(y.shape, dtype=np.int64)
    _maxpool_fwd(x, window, stride, pad, y, arg)
    return y, arg


def adaptive_maxpool_fwd(x: np.ndarray, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.empty((x.shape[0], x.shape[1], out_h, out_w), dtype=x.dtype)
    arg = np.empty(y.shape, dtype=np.int64)
    _adaptive_maxpool_fwd(x, y, arg)
    return y, arg


def maxpool_bwd(arg: np.ndarray, gy: np.ndarray, x_shape: tuple) -> np.ndarray:
    gx = np.zeros(int(np.prod(x_shape)), dtype=np.float64)
    _maxpool_bwd(arg, gy, gx)
    return gx.reshape(x_shape).astype(gy.dtype)

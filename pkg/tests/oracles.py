"""Independent brute-force oracles used to pin expected values.

Everything here is written against the op contracts only: plain nested loops
and pairwise counts, no im2col, no rank tricks, no calls into the engine's
kernels. Tests compare engine output against these.
"""

from __future__ import annotations

import numpy as np


def conv2d_naive(x, kernel, bias, stride, padding):
    """Quadruple-nested-loop cross-correlation in float64."""
    n_b, in_c, h, w = x.shape
    out_c, _, k_h, k_w = kernel.shape
    out_h = (h + 2 * padding - k_h) // stride + 1
    out_w = (w + 2 * padding - k_w) // stride + 1
    x64 = x.astype(np.float64)
    k64 = kernel.astype(np.float64)
    y = np.zeros((n_b, out_c, out_h, out_w), dtype=np.float64)
    for n in range(n_b):
        for o in range(out_c):
            for i in range(out_h):
                for j in range(out_w):
                    acc = float(bias[o])
                    for c in range(in_c):
                        for p in range(k_h):
                            row = i * stride + p - padding
                            if row < 0 or row >= h:
                                continue
                            for q in range(k_w):
                                col = j * stride + q - padding
                                if col < 0 or col >= w:
                                    continue
                                acc += x64[n, c, row, col] * k64[o, c, p, q]
                    y[n, o, i, j] = acc
    return y


def maxpool_naive(x, window, stride, padding=0):
    """Nested-loop max with first-occurrence tie breaking; no arithmetic."""
    n_b, n_c, h, w = x.shape
    out_h = (h + 2 * padding - window) // stride + 1
    out_w = (w + 2 * padding - window) // stride + 1
    y = np.empty((n_b, n_c, out_h, out_w), dtype=x.dtype)
    arg = np.empty((n_b, n_c, out_h, out_w), dtype=np.int64)
    for n in range(n_b):
        for c in range(n_c):
            for i in range(out_h):
                for j in range(out_w):
                    best = None
                    best_idx = -1
                    for p in range(window):
                        row = i * stride + p - padding
                        if row < 0 or row >= h:
                            continue
                        for q in range(window):
                            col = j * stride + q - padding
                            if col < 0 or col >= w:
                                continue
                            v = x[n, c, row, col]
                            if best is None or v > best:
                                best = v
                                best_idx = ((n * n_c + c) * h + row) * w + col
                    y[n, c, i, j] = best
                    arg[n, c, i, j] = best_idx
    return y, arg


def fd_grad(loss_fn, arr, h=1e-3):
    """Central finite differences of a scalar loss w.r.t. every entry of arr.

    arr should be float64; loss_fn is called with no arguments and must read
    arr by reference.
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2.0 * h)
    return grad


def rel_err(a, b, floor=1e-12):
    """Elementwise relative error with an absolute floor on the denominator."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def auc_pairwise(scores, labels):
    """O(n^2) probability that a random positive outscores a random negative."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def stats_two_pass(images):
    """Load-everything per-channel mean and population std over (3, H, W) images."""
    pixels = np.concatenate([img.reshape(3, -1).astype(np.float64) for img in images], axis=1)
    return pixels.mean(axis=1), pixels.std(axis=1)

"""Benchmark the numba-jitted kernels against the pure-numpy fallback.

Times conv forward/backward and pooling on a few representative shapes,
checks that both paths agree, and prints a speedup table.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from allnet import kernels_numpy

try:
    from allnet import kernels_numba
except ImportError:
    kernels_numba = None


def _pad(x, p):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _time(fn, repeats):
    fn()  # warm (JIT + caches)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, make_args, repeats):
    args = make_args()
    rows = []
    for op, call in args:
        numpy_fn = lambda: call(kernels_numpy)  # noqa: E731
        t_np = _time(numpy_fn, repeats)
        if kernels_numba is not None:
            t_nb = _time(lambda: call(kernels_numba), repeats)
            ratio = t_np / t_nb
            rows.append(f"  {op:<14} numba {t_nb * 1e3:8.2f} ms   numpy {t_np * 1e3:8.2f} ms   "
                        f"numba is {ratio:4.1f}x {'faster' if ratio >= 1 else 'slower'}")
        else:
            rows.append(f"  {op:<14} numpy {t_np * 1e3:8.2f} ms   (numba unavailable)")
    print(name)
    print("\n".join(rows))


def check_parity():
    if kernels_numba is None:
        print("numba unavailable: skipping parity check")
        return
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 8, 20, 20)).astype(np.float32)
    k = rng.standard_normal((12, 8, 3, 3)).astype(np.float32)
    b = rng.standard_normal(12).astype(np.float32)
    xp = _pad(x, 1)
    y_nb = kernels_numba.conv2d_fwd(xp, k, b, 1)
    y_np = kernels_numpy.conv2d_fwd(xp, k, b, 1)
    np.testing.assert_allclose(y_nb, y_np, rtol=1e-5, atol=1e-5)
    gy = rng.standard_normal(y_nb.shape).astype(np.float32)
    for a, c in zip(kernels_numba.conv2d_bwd(xp, k, gy, 1), kernels_numpy.conv2d_bwd(xp, k, gy, 1)):
        np.testing.assert_allclose(a, c, rtol=1e-4, atol=1e-5)
    p_nb = kernels_numba.maxpool_fwd(x, 3, 2, 1)
    p_np = kernels_numpy.maxpool_fwd(x, 3, 2, 1)
    assert np.array_equal(p_nb[0], p_np[0]) and np.array_equal(p_nb[1], p_np[1])
    print("parity: both backends agree on conv fwd/bwd and pooling\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats (best-of)")
    args = parser.parse_args()

    check_parity()

    rng = np.random.default_rng(1)
    shapes = [
        ("small  batch=8  16ch 16x16 k3", (8, 16, 16, 16), (16, 16, 3, 3), 1, 1),
        ("medium batch=16 32ch 32x32 k3", (16, 32, 32, 32), (32, 32, 3, 3), 1, 1),
        ("strided batch=8 16ch 64x64 k5 s2", (8, 16, 64, 64), (24, 16, 5, 5), 2, 2),
    ]
    for name, x_shape, k_shape, stride, pad in shapes:
        x = rng.standard_normal(x_shape).astype(np.float32)
        k = rng.standard_normal(k_shape).astype(np.float32)
        b = rng.standard_normal(k_shape[0]).astype(np.float32)
        xp = _pad(x, pad)
        y, arg = kernels_numpy.maxpool_fwd(x, 3, 2, 1)
        gy_shape = (x_shape[0], k_shape[0],
                    (xp.shape[2] - k_shape[2]) // stride + 1,
                    (xp.shape[3] - k_shape[3]) // stride + 1)
        gy = rng.standard_normal(gy_shape).astype(np.float32)
        gp = rng.standard_normal(y.shape).astype(np.float32)

        def cases(xp=xp, k=k, b=b, x=x, gy=gy, gp=gp, arg=arg, stride=stride):
            return [
                ("conv_fwd", lambda m: m.conv2d_fwd(xp, k, b, stride)),
                ("conv_bwd", lambda m: m.conv2d_bwd(xp, k, gy, stride)),
                ("maxpool_fwd", lambda m: m.maxpool_fwd(x, 3, 2, 1)),
                ("maxpool_bwd", lambda m: m.maxpool_bwd(arg, gp, x.shape)),
                ("adaptive_fwd", lambda m: m.adaptive_maxpool_fwd(x, 4, 4)),
            ]

        bench_case(name, cases, args.repeats)
        print()


if __name__ == "__main__":
    main()

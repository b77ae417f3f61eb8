import numpy as np
import pytest

from allnet import ops
from allnet.tensor import ConvParams


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger kernel JIT for both dtypes so timed tests measure steady state."""
    rng = np.random.default_rng(0)
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal((1, 2, 6, 6)).astype(dtype)
        p = ConvParams(
            rng.standard_normal((2, 2, 3, 3)).astype(dtype),
            np.zeros(2, dtype),
            stride=1,
            padding=1,
        )
        y = ops.conv2d(x, p)
        ops.conv2d_backward(x, p, y)
        yp, arg = ops.maxpool2d(x, 2, 2)
        ops.maxpool2d_backward(arg, yp, x.shape)
        ops.adaptive_maxpool2d(x, 3, 3)

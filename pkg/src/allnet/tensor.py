"""Rank-4 tensor helpers, layer parameter records, and the RTF1 fixture format.

Every value flowing through the engine is a dense (batch, channels, height,
width) array stored row-major. float32 is the working precision; float64 is
also accepted so diagnostics such as finite-difference checks can run above
the storage noise floor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

RTF_MAGIC = b"RTF1"

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Input shapes do not satisfy an operation's contract."""


class DegenerateOutputError(ValueError):
    """An operation would produce an output with an empty spatial extent."""


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce ``values`` to a C-contiguous float32 rank-4 array."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {arr.shape}")
    return arr


def check_tensor(x: np.ndarray, name: str = "input") -> None:
    """Validate that ``x`` is a rank-4 float array."""
    if not isinstance(x, np.ndarray):
        raise ShapeError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 4:
        raise ShapeError(f"{name} must have rank 4, got shape {x.shape}")
    if x.dtype not in _FLOAT_DTYPES:
        raise ShapeError(f"{name} must be float32 or float64, got {x.dtype}")


def conv_out_dim(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@dataclass
class ConvParams:
    """Cross-correlation parameters.

    kernel has shape (out_channels, in_channels, k_h, k_w); bias has one entry
    per output channel. Padding is symmetric zero padding.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.kernel = np.ascontiguousarray(self.kernel)
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must have rank 4, got shape {self.kernel.shape}")
        if self.kernel.dtype not in _FLOAT_DTYPES:
            self.kernel = self.kernel.astype(np.float32)
        out_c, in_c, k_h, k_w = self.kernel.shape
        if min(out_c, in_c, k_h, k_w) < 1:
            raise ShapeError(f"kernel dims must all be >= 1, got {self.kernel.shape}")
        self.bias = np.ascontiguousarray(self.bias, dtype=self.kernel.dtype)
        if self.bias.shape != (out_c,):
            raise ShapeError(
                f"bias must have shape ({out_c},) to match kernel {self.kernel.shape}, "
                f"got {self.bias.shape}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output spatial dims for an (h, w) input; raises when empty."""
        k_h, k_w = self.kernel.shape[2:]
        out_h = conv_out_dim(h, k_h, self.stride, self.padding)
        out_w = conv_out_dim(w, k_w, self.stride, self.padding)
        if out_h < 1 or out_w < 1:
            raise DegenerateOutputError(
                f"conv over {h}x{w} input with kernel {k_h}x{k_w}, stride "
                f"{self.stride}, padding {self.padding} yields empty {out_h}x{out_w} output"
            )
        return out_h, out_w

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(
            self.kernel.astype(dtype), self.bias.astype(dtype), self.stride, self.padding
        )


@dataclass
class DenseParams:
    """Fully connected parameters: weights (out_units, in_units) plus bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must have rank 2, got shape {self.weights.shape}")
        if self.weights.dtype not in _FLOAT_DTYPES:
            self.weights = self.weights.astype(np.float32)
        out_u = self.weights.shape[0]
        self.bias = np.ascontiguousarray(self.bias, dtype=self.weights.dtype)
        if self.bias.shape != (out_u,):
            raise ShapeError(
                f"bias must have shape ({out_u},) to match weights "
                f"{self.weights.shape}, got {self.bias.shape}"
            )

    @property
    def out_units(self) -> int:
        return self.weights.shape[0]

    @property
    def in_units(self) -> int:
        return self.weights.shape[1]

    def astype(self, dtype) -> "DenseParams":
        return DenseParams(self.weights.astype(dtype), self.bias.astype(dtype))


def write_rtf(path, x: np.ndarray) -> None:
    """Write a rank-4 float32 tensor in the RTF1 fixture format.

    Layout: magic ``RTF1``, u32 LE rank (always 4), four u32 LE dims, then the
    row-major float32 LE payload. The round trip is bit-exact.
    """
    check_tensor(x, "tensor")
    payload = np.ascontiguousarray(x, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(RTF_MAGIC)
        fh.write(struct.pack("<I", 4))
        fh.write(struct.pack("<4I", *x.shape))
        fh.write(payload.tobytes())


def read_rtf(path) -> np.ndarray:
    """Read an RTF1 file back into a float32 (N, C, H, W) array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != RTF_MAGIC:
        raise ValueError(f"{path}: not an RTF1 file (bad magic {blob[:4]!r})")
    if len(blob) < 24:
        raise ValueError(f"{path}: truncated RTF1 header")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank != 4:
        raise ValueError(f"{path}: RTF1 rank must be 4, got {rank}")
    dims = struct.unpack_from("<4I", blob, 8)
    count = int(np.prod(dims, dtype=np.int64))
    expected = 24 + 4 * count
    if len(blob) != expected:
        raise ValueError(
            f"{path}: RTF1 payload length mismatch, expected {expected} bytes, got {len(blob)}"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=24)
    return flat.astype(np.float32).reshape(dims)

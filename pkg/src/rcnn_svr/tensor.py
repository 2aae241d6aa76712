"""Dense 4-D tensors and the shape arithmetic of convolution and pooling layers.

Shapes are written ``(length, height, depth, batch)``. Data is stored flat in
batch-major order: batch varies slowest, then depth (channels), then height,
and length varies fastest. Viewed as a numpy array this is
``(batch, depth, height, length)``, i.e. the familiar NCHW layout with the
"width" axis holding the length dimension.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    NegativeExtentError,
    NonDivisibleStrideError,
    NonFiniteError,
    PoolTooLargeError,
    ShapeError,
)

_INT64_MAX = np.iinfo(np.int64).max


@dataclass(frozen=True)
class Shape4:
    length: int
    height: int
    depth: int
    batch: int

    def __post_init__(self):
        for name in ("length", "height", "depth", "batch"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ShapeError(f"{name} must be a positive integer, got {value!r}")
        count = 1
        for value in (self.length, self.height, self.depth, self.batch):
            count *= int(value)
        if count > _INT64_MAX:
            raise ShapeError(f"element count {count} overflows a 64-bit integer")

    @property
    def size(self) -> int:
        return self.length * self.height * self.depth * self.batch

    @property
    def array_shape(self) -> tuple[int, int, int, int]:
        """The numpy shape ``(batch, depth, height, length)`` of the canonical order."""
        return (self.batch, self.depth, self.height, self.length)

    @classmethod
    def from_array_shape(cls, shape) -> "Shape4":
        batch, depth, height, length = shape
        return cls(length, height, depth, batch)


class Tensor4:
    """Immutable float64 tensor in canonical batch-major order."""

    __slots__ = ("shape", "_data")

    def __init__(self, shape: Shape4, data):
        flat = np.array(data, dtype=np.float64).reshape(-1)
        if flat.size != shape.size:
            raise ShapeError(
                f"data holds {flat.size} values but shape {shape} needs {shape.size}"
            )
        if not np.all(np.isfinite(flat)):
            raise NonFiniteError("tensor values must be finite")
        flat.flags.writeable = False
        self.shape = shape
        self._data = flat

    @classmethod
    def from_array(cls, array) -> "Tensor4":
        """Wrap a ``(batch, depth, height, length)`` array."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 4:
            raise ShapeError(f"expected a 4-D array, got {array.ndim}-D")
        return cls(Shape4.from_array_shape(array.shape), array)

    @property
    def data(self) -> np.ndarray:
        return self._data

    def to_array(self) -> np.ndarray:
        """Read-only ``(batch, depth, height, length)`` view of the data."""
        return self._data.reshape(self.shape.array_shape)

    def __eq__(self, other):
        if not isinstance(other, Tensor4):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __repr__(self):
        s = self.shape
        return f"Tensor4({s.length}x{s.height}x{s.depth}x{s.batch})"


@dataclass(frozen=True)
class ConvGeometry:
    input_size: int
    filter_size: int
    padding: int = 0
    stride: int = 1
    filter_count: int = 1

    def __post_init__(self):
        if self.input_size < 1 or self.filter_size < 1 or self.stride < 1 or self.filter_count < 1:
            raise ShapeError(f"invalid convolution geometry {self}")
        if self.padding < 0:
            raise ShapeError(f"padding must be non-negative, got {self.padding}")


def conv_output_shape(g: ConvGeometry) -> tuple[int, int]:
    """Return ``((I - F + 2P) / S + 1, N)`` for a convolution layer."""
    extent = g.input_size - g.filter_size + 2 * g.padding
    if extent < 0:
        raise NegativeExtentError(
            f"filter size {g.filter_size} exceeds padded input "
            f"{g.input_size} + 2*{g.padding}"
        )
    if extent % g.stride:
        raise NonDivisibleStrideError(
            f"(I - F + 2P) = {extent} is not divisible by stride {g.stride}"
        )
    return extent // g.stride + 1, g.filter_count


def pool_output_shape(input_size: int, pool_stride: int, channels: int) -> tuple[int, int]:
    """Return ``(floor(I / S), N)`` for a non-overlapping max-pool layer.

    A remainder is dropped with a warning.
    """
    if pool_stride < 1 or channels < 1 or input_size < 1:
        raise ShapeError("pooling sizes must be positive")
    if input_size < pool_stride:
        raise PoolTooLargeError(f"pool stride {pool_stride} exceeds input size {input_size}")
    if input_size % pool_stride:
        warnings.warn(
            f"pooling {input_size} by {pool_stride} drops {input_size % pool_stride} "
            "trailing position(s)",
            stacklevel=2,
        )
    return input_size // pool_stride, channels


def flatten(t: Tensor4) -> np.ndarray:
    """Return a ``(batch, length*height*depth)`` copy, one row per sample."""
    return t.data.reshape(t.shape.batch, -1).copy()


def unflatten(matrix, length: int, height: int, depth: int) -> Tensor4:
    """Inverse of :func:`flatten` for a known per-sample shape."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError("expected a 2-D matrix")
    if matrix.shape[1] != length * height * depth:
        raise ShapeError(
            f"{matrix.shape[1]} columns cannot hold {length}x{height}x{depth} features"
        )
    return Tensor4(Shape4(length, height, depth, matrix.shape[0]), matrix)

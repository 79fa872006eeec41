"""Dense float64 value carrier and convolution geometry.

Every feature map, weight, and loss in this package lives in a small 1-3
axis float64 array. ``Tensor`` couples such an array with an optional
same-shape gradient buffer; backward kernels accumulate (+=) into the
buffer, and an explicit :meth:`Tensor.zero_grad` is required per training
step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def as_f64(values) -> np.ndarray:
    """Coerce to a C-contiguous (row-major) float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


class Tensor:
    """A dense float64 array plus an optional accumulated-gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, values, grad=None):
        self.data = as_f64(values)
        self.grad = None if grad is None else as_f64(grad)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ShapeError("Tensor", "grad", self.data.shape, self.grad.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def ensure_grad(self) -> np.ndarray:
        """Return the gradient buffer, allocating zeros on first use."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def all_finite(self) -> bool:
        if not np.all(np.isfinite(self.data)):
            return False
        return self.grad is None or bool(np.all(np.isfinite(self.grad)))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.grad is not None else 'no'})"


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a length-preserving dilated 1D convolution.

    Padding is fixed to ``dilation * (kernel_size - 1) / 2`` zeros on each
    side so the output temporal length always equals the input length.
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be positive, got {self.in_channels}x{self.out_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd int, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel_size - 1) // 2

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_size)

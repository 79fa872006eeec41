"""Parameter-owning convolution layer used by the trunk and the head."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .kernels import conv1d_backward, conv1d_forward
from .tensor import ConvSpec, Tensor


class Conv1d:
    """Length-preserving dilated 1D convolution with learnable weight/bias.

    ``backward`` accumulates parameter gradients (+=) into the layer's own
    Tensors and returns the input gradient; callers zero grads per step.
    """

    def __init__(
        self,
        name: str,
        spec: ConvSpec,
        rng: np.random.Generator,
        weight_std: float | None = None,
        bias_init: float = 0.0,
    ):
        self.name = name
        self.spec = spec
        if weight_std is None:
            # He-style fan-in scaling keeps trunk activations O(1)
            weight_std = float(np.sqrt(2.0 / (spec.in_channels * spec.kernel_size)))
        self.weight = Tensor(rng.normal(0.0, weight_std, spec.weight_shape))
        self.bias = Tensor(np.full(spec.out_channels, bias_init))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = conv1d_forward(x, self.spec, self.weight.data, self.bias.data)
        return out, x

    def backward(self, grad_out: np.ndarray, saved_input: np.ndarray) -> np.ndarray:
        grad_in, grad_w, grad_b = conv1d_backward(grad_out, saved_input, self.spec, self.weight.data)
        self.weight.ensure_grad()
        self.weight.grad += grad_w
        self.bias.ensure_grad()
        self.bias.grad += grad_b
        return grad_in

    def named_params(self) -> Iterator[tuple[str, Tensor]]:
        yield f"{self.name}.weight", self.weight
        yield f"{self.name}.bias", self.bias

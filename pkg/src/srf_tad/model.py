"""Feature stem, predictor head, and the assembled detector.

The stem stands in for a video backbone: it maps per-frame synthetic
features (in_dim x L) to a trunk feature map (channels x L/stride) with two
conv+ReLU layers and log2(stride) stride-2 max-poolings. The head reads the
selective-receptive-field block's output and emits, per temporal location,
per-class sigmoid logits, two raw offset activations, and a center-ness
logit from the regression tower's hidden features.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ShapeError
from .kernels import (
    relu_backward,
    relu_forward,
    temporal_maxpool_backward,
    temporal_maxpool_forward,
)
from .layers import Conv1d
from .srfc import AttentionMap, SrfcBlock, SrfcConfig, VARIANTS
from .tensor import ConvSpec, Tensor

CTR_MODES = ("learned", "derived", "none")

HEAD_WEIGHT_STD = 0.01
CLS_PRIOR = 0.01  # cold-start positive probability of the classification branch


@dataclass(frozen=True)
class StemConfig:
    in_dim: int
    channels: int
    stride: int = 16

    def __post_init__(self):
        if self.stride < 1 or (self.stride & (self.stride - 1)) != 0:
            raise ValueError(f"stride must be a positive power of two, got {self.stride}")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild the detector from a checkpoint."""

    n_classes: int = 3
    in_dim: int = 16
    channels: int = 64
    stride: int = 16
    branch_kernel: int = 3
    fuse_hidden: int = 16
    fuse_kernel: int = 3
    variant: str = "srf"
    ctr_mode: str = "learned"

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.ctr_mode not in CTR_MODES:
            raise ValueError(f"unknown ctr_mode {self.ctr_mode!r}, expected one of {CTR_MODES}")
        StemConfig(self.in_dim, self.channels, self.stride)

    def stem_config(self) -> StemConfig:
        return StemConfig(self.in_dim, self.channels, self.stride)

    def srfc_config(self) -> SrfcConfig:
        return SrfcConfig(self.channels, self.branch_kernel, self.fuse_hidden, self.fuse_kernel, self.variant)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class HeadOutputs:
    """Per-location predictions: pre-sigmoid class logits (C x T), raw
    offset activations (2 x T), pre-sigmoid center-ness logits (1 x T)."""

    cls: np.ndarray
    reg: np.ndarray
    ctr: np.ndarray

    @property
    def n_locations(self) -> int:
        return self.cls.shape[1]


def decode_offsets(reg: np.ndarray, stride: int) -> np.ndarray:
    """Map raw offset activations to strictly positive frame offsets.

    (left, right) = exp(reg) * stride, so zero activations decode to one
    stride window on each side.
    """
    return np.exp(reg) * float(stride)


class Stem:
    """Backbone substitute: conv+ReLU twice, with stride-2 poolings split
    around the second convolution to reach the configured total stride."""

    def __init__(self, config: StemConfig, rng: np.random.Generator, name: str = "stem"):
        self.config = config
        self.conv_in = Conv1d(f"{name}.conv_in", ConvSpec(config.in_dim, config.channels, 3), rng)
        self.conv_mid = Conv1d(f"{name}.conv_mid", ConvSpec(config.channels, config.channels, 3), rng)
        n_pools = int(math.log2(config.stride))
        self.pools_early = (n_pools + 1) // 2
        self.pools_late = n_pools // 2

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, dict]:
        if features.ndim != 2 or features.shape[0] != self.config.in_dim:
            raise ShapeError("stem", "in_dim", self.config.in_dim, features.shape)
        length = features.shape[1]
        if length < self.config.stride:
            raise ShapeError("stem", "time", f">= stride {self.config.stride}", length)
        pad = (-length) % self.config.stride
        if pad:
            features = np.concatenate([features, np.zeros((features.shape[0], pad))], axis=1)
        steps = []
        x = features

        def conv_relu(conv: Conv1d, x: np.ndarray) -> np.ndarray:
            pre, saved = conv.forward(x)
            steps.append(("conv", conv, saved))
            steps.append(("relu", pre))
            return relu_forward(pre)

        def pool(x: np.ndarray) -> np.ndarray:
            out, argmax_idx = temporal_maxpool_forward(x, 2, 2)
            steps.append(("pool", argmax_idx, x.shape))
            return out

        x = conv_relu(self.conv_in, x)
        for _ in range(self.pools_early):
            x = pool(x)
        x = conv_relu(self.conv_mid, x)
        for _ in range(self.pools_late):
            x = pool(x)
        return x, {"steps": steps, "pad": pad}

    def backward(self, grad_out: np.ndarray, cache: dict) -> np.ndarray:
        grad = grad_out
        for step in reversed(cache["steps"]):
            if step[0] == "conv":
                _, conv, saved = step
                grad = conv.backward(grad, saved)
            elif step[0] == "relu":
                grad = relu_backward(grad, step[1])
            else:
                _, argmax_idx, shape = step
                grad = temporal_maxpool_backward(grad, argmax_idx, shape)
        pad = cache["pad"]
        return grad[:, :grad.shape[1] - pad] if pad else grad

    def named_params(self):
        yield from self.conv_in.named_params()
        yield from self.conv_mid.named_params()


class Head:
    """Classification and regression towers plus the center-ness branch.

    Both towers stack two k=3 convolutions with a ReLU between them; the
    center-ness branch is a single k=3 convolution on the regression
    tower's hidden features. Weights start at N(0, 0.01) and the final
    classification bias encodes a small positive prior.
    """

    def __init__(self, channels: int, n_classes: int, rng: np.random.Generator, name: str = "head"):
        self.n_classes = n_classes
        std = HEAD_WEIGHT_STD
        self.cls_hidden = Conv1d(f"{name}.cls_hidden", ConvSpec(channels, channels, 3), rng, weight_std=std)
        self.cls_out = Conv1d(
            f"{name}.cls_out", ConvSpec(channels, n_classes, 3), rng, weight_std=std,
            bias_init=-math.log((1.0 - CLS_PRIOR) / CLS_PRIOR),
        )
        self.reg_hidden = Conv1d(f"{name}.reg_hidden", ConvSpec(channels, channels, 3), rng, weight_std=std)
        self.reg_out = Conv1d(f"{name}.reg_out", ConvSpec(channels, 2, 3), rng, weight_std=std)
        self.ctr_out = Conv1d(f"{name}.ctr_out", ConvSpec(channels, 1, 3), rng, weight_std=std)

    def forward(self, v: np.ndarray) -> tuple[HeadOutputs, dict]:
        cls_pre, cls_saved = self.cls_hidden.forward(v)
        cls_h = relu_forward(cls_pre)
        cls, cls_out_saved = self.cls_out.forward(cls_h)

        reg_pre, reg_saved = self.reg_hidden.forward(v)
        reg_h = relu_forward(reg_pre)
        reg, reg_out_saved = self.reg_out.forward(reg_h)
        ctr, ctr_saved = self.ctr_out.forward(reg_h)

        cache = {
            "cls_pre": cls_pre, "cls_saved": cls_saved, "cls_out_saved": cls_out_saved,
            "reg_pre": reg_pre, "reg_saved": reg_saved, "reg_out_saved": reg_out_saved,
            "ctr_saved": ctr_saved,
        }
        return HeadOutputs(cls, reg, ctr), cache

    def backward(self, grad: HeadOutputs, cache: dict) -> np.ndarray:
        grad_cls_h = self.cls_out.backward(grad.cls, cache["cls_out_saved"])
        grad_cls_pre = relu_backward(grad_cls_h, cache["cls_pre"])
        grad_v = self.cls_hidden.backward(grad_cls_pre, cache["cls_saved"])

        grad_reg_h = self.reg_out.backward(grad.reg, cache["reg_out_saved"])
        grad_reg_h += self.ctr_out.backward(grad.ctr, cache["ctr_saved"])
        grad_reg_pre = relu_backward(grad_reg_h, cache["reg_pre"])
        grad_v += self.reg_hidden.backward(grad_reg_pre, cache["reg_saved"])
        return grad_v

    def named_params(self):
        for conv in (self.cls_hidden, self.cls_out, self.reg_hidden, self.reg_out, self.ctr_out):
            yield from conv.named_params()


class SrfNet:
    """Stem -> selective receptive-field block -> predictor head."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.stem = Stem(config.stem_config(), rng)
        self.srfc = SrfcBlock(config.srfc_config(), rng)
        self.head = Head(config.channels, config.n_classes, rng)
        self._params = list(self.stem.named_params()) + list(self.srfc.named_params()) + list(self.head.named_params())

    @classmethod
    def build(cls, config: ModelConfig, seed: int) -> "SrfNet":
        return cls(config, np.random.default_rng(seed))

    def forward(self, features: np.ndarray) -> tuple[HeadOutputs, dict]:
        trunk, stem_cache = self.stem.forward(features)
        v, srfc_cache = self.srfc.forward(trunk)
        outputs, head_cache = self.head.forward(v)
        return outputs, {"stem": stem_cache, "srfc": srfc_cache, "head": head_cache}

    def backward(self, grad: HeadOutputs, cache: dict) -> np.ndarray:
        grad_v = self.head.backward(grad, cache["head"])
        grad_trunk = self.srfc.backward(grad_v, cache["srfc"])
        return self.stem.backward(grad_trunk, cache["stem"])

    def attention_from_cache(self, cache: dict) -> AttentionMap | None:
        return self.srfc.attention_from_cache(cache["srfc"])

    def named_params(self) -> list[tuple[str, Tensor]]:
        return list(self._params)

    def zero_grads(self) -> None:
        for _, p in self._params:
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.data.size for _, p in self._params)


def model_gradcheck_op(model: SrfNet, features: np.ndarray):
    """Wrap a model as a grad_check op over its parameters.

    Returns (op, input_shapes); the op writes candidate parameter arrays
    into the model, runs a forward pass from the fixed features, and its
    vjp backpropagates a flattened output gradient into parameter grads.
    """
    params = [p for _, p in model.named_params()]
    shapes = [p.data.shape for p in params]

    def op(arrays: list[np.ndarray]):
        for p, a in zip(params, arrays):
            p.data[...] = a
        outputs, cache = model.forward(features)
        sizes = (outputs.cls.size, outputs.reg.size, outputs.ctr.size)
        flat = np.concatenate([outputs.cls.ravel(), outputs.reg.ravel(), outputs.ctr.ravel()])

        def vjp(grad_flat: np.ndarray) -> list[np.ndarray]:
            g_cls, g_reg, g_ctr = np.split(grad_flat, np.cumsum(sizes)[:-1])
            grad = HeadOutputs(
                g_cls.reshape(outputs.cls.shape),
                g_reg.reshape(outputs.reg.shape),
                g_ctr.reshape(outputs.ctr.shape),
            )
            model.zero_grads()
            model.backward(grad, cache)
            return [p.grad.copy() for p in params]

        return flat, vjp

    return op, shapes

"""Selective receptive-field convolution block.

Three parallel dilated convolutions (dilations 1, 3, 5) read the trunk
feature map at growing temporal spans. A small attention network pools each
branch over channels, stacks the six pooled rows, and produces a per-location
softmax over the branches; the block output mixes the branches with those
weights. Ablation variants bypass the attention: a single branch alone, or
the plain sum of all three.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kernels import (
    channel_pool_backward,
    channel_pool_forward,
    relu_backward,
    relu_forward,
    softmax_channels_backward,
    softmax_channels_forward,
)
from .layers import Conv1d
from .tensor import ConvSpec, Tensor

VARIANTS = ("c0", "c1", "c2", "sum", "srf")
N_BRANCHES = 3
BRANCH_DILATIONS = tuple(2 * n - 1 for n in range(1, N_BRANCHES + 1))  # 1, 3, 5
_SINGLE_BRANCH = {"c0": 0, "c1": 1, "c2": 2}


@dataclass(frozen=True)
class SrfcConfig:
    channels: int = 64
    branch_kernel: int = 3
    fuse_hidden: int = 16
    fuse_kernel: int = 3
    variant: str = "srf"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")


@dataclass(frozen=True)
class AttentionMap:
    """Per-location soft weights over the three branches, shape 3 x T.

    Every column sums to 1 and every entry lies in [0, 1].
    """

    m: np.ndarray

    def validate(self, tol: float = 1e-9) -> "AttentionMap":
        if self.m.ndim != 2 or self.m.shape[0] != N_BRANCHES:
            raise ShapeError("AttentionMap", "branches", (N_BRANCHES, "T"), self.m.shape)
        if np.any(self.m < 0.0) or np.any(self.m > 1.0):
            raise ValueError("attention weights outside [0, 1]")
        if np.max(np.abs(self.m.sum(axis=0) - 1.0)) > tol:
            raise ValueError("attention columns do not sum to 1")
        return self


class SrfcBlock:
    """Split / fuse / select over three dilated branches.

    All five variants share the same parameter set so checkpoints are
    shape-compatible across ablations; variants that skip a path simply
    leave its parameters untouched by gradients.
    """

    def __init__(self, config: SrfcConfig, rng: np.random.Generator, name: str = "srfc"):
        self.config = config
        ch, kb = config.channels, config.branch_kernel
        self.branches = [
            Conv1d(f"{name}.branch{n}", ConvSpec(ch, ch, kb, dilation=dil), rng)
            for n, dil in enumerate(BRANCH_DILATIONS)
        ]
        kf = config.fuse_kernel
        self.fuse_reduce = Conv1d(f"{name}.fuse_reduce", ConvSpec(2 * N_BRANCHES, config.fuse_hidden, kf), rng)
        self.fuse_expand = Conv1d(f"{name}.fuse_expand", ConvSpec(config.fuse_hidden, N_BRANCHES, kf), rng)

    # -- split ------------------------------------------------------------

    def split(self, t_map: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Run the three dilated branch convolutions; returns (maps, caches)."""
        if t_map.ndim != 2 or t_map.shape[0] != self.config.channels:
            raise ShapeError("split", "channels", self.config.channels, t_map.shape)
        outs, caches = [], []
        for conv in self.branches:
            out, cache = conv.forward(t_map)
            outs.append(out)
            caches.append(cache)
        return outs, caches

    # -- fuse -------------------------------------------------------------

    def fuse(self, f1: np.ndarray, f2: np.ndarray, f3: np.ndarray) -> tuple[AttentionMap, dict]:
        """Pool each branch over channels, stack, and score the branches.

        The stacked descriptor interleaves (avg, max) per branch in branch
        order; two convolutions with a ReLU between them produce the branch
        logits, normalized per location by a channel softmax.
        """
        maps = (f1, f2, f3)
        if not (f1.shape == f2.shape == f3.shape):
            raise ShapeError("fuse", "branch", f1.shape, (f2.shape, f3.shape))
        rows = []
        for f in maps:
            avg, mx = channel_pool_forward(f)
            rows.extend((avg, mx))
        descriptor = np.concatenate(rows, axis=0)
        hidden_pre, cache_reduce = self.fuse_reduce.forward(descriptor)
        hidden = relu_forward(hidden_pre)
        logits, cache_expand = self.fuse_expand.forward(hidden)
        m = softmax_channels_forward(logits)
        cache = {
            "branch_maps": maps,
            "cache_reduce": cache_reduce,
            "hidden_pre": hidden_pre,
            "cache_expand": cache_expand,
            "m": m,
        }
        return AttentionMap(m), cache

    def fuse_backward(self, grad_m: np.ndarray, cache: dict) -> list[np.ndarray]:
        """Adjoint of fuse; returns per-branch feature-map gradients."""
        grad_logits = softmax_channels_backward(grad_m, cache["m"])
        grad_hidden = self.fuse_expand.backward(grad_logits, cache["cache_expand"])
        grad_hidden_pre = relu_backward(grad_hidden, cache["hidden_pre"])
        grad_descriptor = self.fuse_reduce.backward(grad_hidden_pre, cache["cache_reduce"])
        grads = []
        for n, f in enumerate(cache["branch_maps"]):
            grad_avg = grad_descriptor[2 * n:2 * n + 1]
            grad_max = grad_descriptor[2 * n + 1:2 * n + 2]
            grads.append(channel_pool_backward(grad_avg, grad_max, f))
        return grads

    # -- select -----------------------------------------------------------

    @staticmethod
    def select(f1: np.ndarray, f2: np.ndarray, f3: np.ndarray, attention: AttentionMap) -> np.ndarray:
        """Mix the branches per location: V[i, x] = sum_n M[n, x] * F_n[i, x]."""
        maps = (f1, f2, f3)
        if not (f1.shape == f2.shape == f3.shape):
            raise ShapeError("select", "branch", f1.shape, (f2.shape, f3.shape))
        m = attention.m
        if m.shape != (N_BRANCHES, f1.shape[1]):
            raise ShapeError("select", "attention", (N_BRANCHES, f1.shape[1]), m.shape)
        out = np.zeros_like(f1)
        for n, f in enumerate(maps):
            out += m[n] * f
        return out

    # -- variants ---------------------------------------------------------

    def forward(self, t_map: np.ndarray) -> tuple[np.ndarray, dict]:
        variant = self.config.variant
        if variant in _SINGLE_BRANCH:
            n = _SINGLE_BRANCH[variant]
            out, cache_in = self.branches[n].forward(t_map)
            return out, {"variant": variant, "cache_in": cache_in}
        branch_maps, branch_caches = self.split(t_map)
        if variant == "sum":
            out = branch_maps[0] + branch_maps[1] + branch_maps[2]
            return out, {"variant": variant, "branch_caches": branch_caches}
        if variant == "srf":
            attention, fuse_cache = self.fuse(*branch_maps)
            out = self.select(*branch_maps, attention)
            return out, {
                "variant": variant,
                "branch_caches": branch_caches,
                "branch_maps": branch_maps,
                "fuse_cache": fuse_cache,
                "attention": attention,
            }
        raise ValueError(f"unknown variant {variant!r}")

    def backward(self, grad_out: np.ndarray, cache: dict) -> np.ndarray:
        variant = cache["variant"]
        if variant in _SINGLE_BRANCH:
            return self.branches[_SINGLE_BRANCH[variant]].backward(grad_out, cache["cache_in"])
        if variant == "sum":
            grad_in = self.branches[0].backward(grad_out, cache["branch_caches"][0])
            for conv, saved in zip(self.branches[1:], cache["branch_caches"][1:]):
                grad_in += conv.backward(grad_out, saved)
            return grad_in
        # srf: product rule through select, then the attention path
        m = cache["attention"].m
        branch_maps = cache["branch_maps"]
        grad_m = np.stack([(grad_out * f).sum(axis=0) for f in branch_maps])
        grad_branches = [m[n] * grad_out for n in range(N_BRANCHES)]
        for n, g in enumerate(self.fuse_backward(grad_m, cache["fuse_cache"])):
            grad_branches[n] += g
        grad_in = None
        for conv, grad_f, saved in zip(self.branches, grad_branches, cache["branch_caches"]):
            g = conv.backward(grad_f, saved)
            grad_in = g if grad_in is None else grad_in + g
        return grad_in

    def attention_from_cache(self, cache: dict) -> AttentionMap | None:
        """The attention map computed during forward, if the variant has one."""
        return cache.get("attention")

    def named_params(self):
        for conv in (*self.branches, self.fuse_reduce, self.fuse_expand):
            yield from conv.named_params()


def attention_to_csv(attention: AttentionMap) -> str:
    """Render an attention map as CSV rows of location_index, m1, m2, m3."""
    lines = ["location_index,m1,m2,m3"]
    for x in range(attention.m.shape[1]):
        vals = ",".join(repr(float(v)) for v in attention.m[:, x])
        lines.append(f"{x},{vals}")
    return "\n".join(lines) + "\n"

"""Layer containers over the tensor kernels.

A Module is just a parameter namespace: trainable tensors are discovered by
walking attributes (and lists of sub-modules), yielding dotted names that the
checkpoint container uses verbatim.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    Tensor,
    conv1d,
    group_norm,
    linear,
)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {src.shape} != {p.data.shape}")
            p.data = np.array(src, dtype=np.float64)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 zero_init: bool = False):
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((out_channels, in_channels, kernel_size))
        else:
            bound = 1.0 / np.sqrt(in_channels * kernel_size)
            w = rng.uniform(-bound, bound, (out_channels, in_channels, kernel_size))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.uniform(-bound, bound, (out_features, in_features)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class GroupNorm(Module):
    """Group normalisation; one group behaves as layer norm over channels."""

    def __init__(self, channels: int, num_groups: int = 8, eps: float = 1e-5):
        self.num_groups = resolve_groups(channels, num_groups)
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.gamma, self.beta, self.num_groups, self.eps)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.weight = Tensor(0.02 * rng.standard_normal((num_embeddings, dim)),
                             requires_grad=True)


def resolve_groups(channels: int, requested: int) -> int:
    """Largest divisor of `channels` that does not exceed `requested`."""
    for g in range(min(requested, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1

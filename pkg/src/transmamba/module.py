"""Minimal module tree: learnable parameters with stable hierarchical names.

Parameter values are kept float32-exact (stored in float64 but rounded
through float32) so that 32-bit checkpoints round-trip losslessly; all
arithmetic still runs in 64-bit.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .rng import Rng
from .tensor import Tensor


def quantize32(a: np.ndarray) -> np.ndarray:
    """Round float64 values to the nearest float32-representable value."""
    return a.astype(np.float32).astype(np.float64)


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(quantize32(np.asarray(data, dtype=np.float64)), requires_grad=True)


class Module:
    """Parameter container with recursive named traversal."""

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self.__dict__.setdefault("_children", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self.__dict__.get("_params", {}).items():
            yield prefix + name, p
        for name, child in self.__dict__.get("_children", {}).items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> Iterator[Parameter]:
        for _, p in self.named_parameters():
            yield p

    def state_dict(self) -> dict[str, Parameter]:
        state = dict(self.named_parameters())
        if len(state) != sum(1 for _ in self.named_parameters()):
            raise ValueError("parameter names are not unique")
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch; missing={missing[:3]} unexpected={extra[:3]}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {value.shape} != expected {p.data.shape}")
            p.data = quantize32(value)
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList:
    def __init__(self, modules=()):
        self._items = list(modules)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def append(self, m):
        self._items.append(m)

    def named_parameters(self, prefix: str = ""):
        for i, m in enumerate(self._items):
            yield from m.named_parameters(f"{prefix}{i}.")


def conv_init(rng: Rng, shape: tuple, fan_in: int, gain: float = 1.0) -> np.ndarray:
    """Uniform fan-in initialization, U(-g/sqrt(fan_in), g/sqrt(fan_in))."""
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: Rng, stride: int = 1,
                 padding=None, dilation: int = 1, groups: int = 1, bias: bool = True,
                 gain: float = 1.0):
        self.stride, self.padding, self.dilation, self.groups = stride, padding, dilation, groups
        fan_in = (cin // groups) * k * k
        self.weight = Parameter(conv_init(rng, (cout, cin // groups, k, k), fan_in, gain))
        self.bias = Parameter(conv_init(rng, (cout,), fan_in, gain)) if bias else None

    def forward(self, x):
        from .ops import conv2d

        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding,
                      dilation=self.dilation, groups=self.groups)


class Conv1dDepthwise(Module):
    def __init__(self, channels: int, k: int, rng: Rng):
        self.weight = Parameter(conv_init(rng, (channels, 1, k), k))
        self.bias = Parameter(conv_init(rng, (channels,), k))

    def forward(self, x):
        from .ops import conv1d_depthwise

        return conv1d_depthwise(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))

    def forward(self, x):
        from .ops import layer_norm

        return layer_norm(x, self.gamma, self.beta, self.eps)

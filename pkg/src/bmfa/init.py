"""Name-keyed parameter initialization.

Every parameter draws from its own generator seeded by (seed, crc32(name)),
so a parameter's initial value depends only on the seed and its dotted name —
never on how many other parameters exist. Two variants of the network that
share a submodule therefore initialize that submodule identically, which is
what makes exact cross-variant comparisons possible.
"""

from __future__ import annotations

import zlib

import numpy as np

from .autograd import Node
from .errors import ValidationError
from .ops import BatchNormState, ConvParams


class ParamFactory:
    """Creates and registers named parameters and batch-norm states."""

    def __init__(self, seed: int, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Node] = {}
        self.bns: dict[str, BatchNormState] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng((self.seed, zlib.crc32(name.encode())))

    def _register(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        node = Node(np.ascontiguousarray(value, dtype=self.dtype))
        self.params[name] = node
        return node

    def he(self, name: str, shape: tuple[int, ...], fan_in: int) -> Node:
        std = np.sqrt(2.0 / fan_in)
        return self._register(name, self._rng(name).normal(0.0, std, shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Node:
        return self._register(name, np.zeros(shape))

    def conv(self, name: str, cout: int, cin: int, k: tuple[int, int],
             stride: tuple[int, int] = (1, 1)) -> ConvParams:
        """3x3/1x1/7x7 convolution, He fan-in init, same-padding, no bias."""
        kt, kf = k
        w = self.he(f"{name}.weight", (cout, cin, kt, kf), cin * kt * kf)
        return ConvParams(w, None, stride, (kt // 2, kf // 2))

    def batchnorm(self, name: str, channels: int) -> BatchNormState:
        if name in self.bns:
            raise ValidationError(f"duplicate batchnorm name {name!r}")
        state = BatchNormState(
            gamma=self._register(f"{name}.gamma", np.ones(channels)),
            beta=self._register(f"{name}.beta", np.zeros(channels)),
            running_mean=np.zeros(channels, dtype=self.dtype),
            running_var=np.ones(channels, dtype=self.dtype),
        )
        self.bns[name] = state
        return state

    def linear(self, name: str, dout: int, din: int) -> tuple[Node, Node]:
        w = self.he(f"{name}.weight", (dout, din), din)
        b = self.zeros(f"{name}.bias", (dout,))
        return w, b

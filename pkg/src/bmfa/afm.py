"""Attentional fusion of two equally shaped feature maps.

The module learns a bounded attention map

    S = tanh(BN(W2 * ReLU(BN(W1 * [x, y]))))

from the channel concatenation of its inputs (1x1 convolutions, channel
bottleneck C/r) and blends the inputs with complementary weights

    fuse(x, y) = (1 + S) * x + (1 - S) * y

so the two weights sum to 2 at every position. The ordering of x and y
matters. With W2 zeroed (and bn2 at identity) S vanishes and fuse reduces to
plain addition, bit for bit.
"""

from __future__ import annotations

from . import ops
from .autograd import Node
from .errors import ShapeError, ValidationError
from .init import ParamFactory


class Afm:
    def __init__(self, f: ParamFactory, name: str, channels: int, r: int = 4):
        if r < 1 or channels < r or channels % r != 0:
            raise ValidationError(
                f"afm channel count {channels} must be a positive multiple of r={r}"
            )
        self.channels = channels
        self.w1 = f.conv(f"{name}.W1", channels // r, 2 * channels, (1, 1))
        self.bn1 = f.batchnorm(f"{name}.bn1", channels // r)
        self.w2 = f.conv(f"{name}.W2", channels, channels // r, (1, 1))
        self.bn2 = f.batchnorm(f"{name}.bn2", channels)

    def _check(self, x: Node, y: Node) -> None:
        if x.shape != y.shape:
            raise ShapeError(f"afm inputs must match, got {x.shape} vs {y.shape}")
        if x.shape[1] != self.channels:
            raise ShapeError(f"afm built for {self.channels} channels, got {x.shape[1]}")

    def attention(self, x: Node, y: Node) -> Node:
        self._check(x, y)
        h = ops.concat_channels(x, y)
        h = ops.relu(ops.batchnorm(ops.conv2d(h, self.w1), self.bn1))
        return ops.tanh(ops.batchnorm(ops.conv2d(h, self.w2), self.bn2))

    def __call__(self, x: Node, y: Node) -> Node:
        s = self.attention(x, y)
        return ops.add(
            ops.mul(ops.add_scalar(s, 1.0), x),
            ops.mul(ops.rsub_scalar(s, 1.0), y),
        )

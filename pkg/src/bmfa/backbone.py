"""ResNet34 feature extractor over (N, 1, T, 64) log-mel inputs.

The stem keeps full resolution (7x7 conv, stride 1). Stage 1 halves both time
and frequency; stages 2-4 halve frequency only, so every stage map keeps T/2
frames and C_i * F_i = 1024. The last map of each stage (C1..C4) is exposed
for the aggregation branches.
"""

from __future__ import annotations

from . import ops
from .autograd import Node
from .errors import ShapeError
from .init import ParamFactory

BLOCKS = (3, 4, 6, 3)
CHANNELS = (32, 64, 128, 256)
STAGE_STRIDES = ((2, 2), (1, 2), (1, 2), (1, 2))
INPUT_FREQ = 64


def stage_shape(stage: int, n: int, t: int) -> tuple[int, int, int, int]:
    """Expected (N, C, T, F) of the stage's output for an (n, 1, t, 64) input."""
    return (n, CHANNELS[stage - 1], t // 2, INPUT_FREQ // 2 ** stage)


class ResidualBlock:
    """conv-BN-ReLU-conv-BN with additive shortcut and final ReLU; a 1x1
    projection (+BN) carries the shortcut whenever stride or width changes."""

    def __init__(self, f: ParamFactory, name: str, cin: int, cout: int,
                 stride: tuple[int, int]):
        self.conv1 = f.conv(f"{name}.conv1", cout, cin, (3, 3), stride)
        self.bn1 = f.batchnorm(f"{name}.bn1", cout)
        self.conv2 = f.conv(f"{name}.conv2", cout, cout, (3, 3))
        self.bn2 = f.batchnorm(f"{name}.bn2", cout)
        if stride != (1, 1) or cin != cout:
            self.proj = f.conv(f"{name}.proj", cout, cin, (1, 1), stride)
            self.bnp = f.batchnorm(f"{name}.bnp", cout)
        else:
            self.proj = None
            self.bnp = None

    def __call__(self, x: Node) -> Node:
        h = ops.relu(ops.batchnorm(ops.conv2d(x, self.conv1), self.bn1))
        h = ops.batchnorm(ops.conv2d(h, self.conv2), self.bn2)
        shortcut = x
        if self.proj is not None:
            shortcut = ops.batchnorm(ops.conv2d(x, self.proj), self.bnp)
        return ops.relu(ops.add(h, shortcut))


class Backbone:
    def __init__(self, f: ParamFactory, name: str = "backbone"):
        self.conv0 = f.conv(f"{name}.conv0", CHANNELS[0], 1, (7, 7))
        self.bn0 = f.batchnorm(f"{name}.bn0", CHANNELS[0])
        self.stages: list[list[ResidualBlock]] = []
        cin = CHANNELS[0]
        for s, (n_blocks, cout, stride) in enumerate(
            zip(BLOCKS, CHANNELS, STAGE_STRIDES), start=1
        ):
            blocks = []
            for b in range(1, n_blocks + 1):
                blocks.append(
                    ResidualBlock(
                        f,
                        f"{name}.stage{s}.block{b}",
                        cin if b == 1 else cout,
                        cout,
                        stride if b == 1 else (1, 1),
                    )
                )
            self.stages.append(blocks)
            cin = cout

    def __call__(self, x: Node) -> list[Node]:
        """Returns [C1, C2, C3, C4]."""
        if x.value.ndim != 4 or x.shape[1] != 1 or x.shape[3] != INPUT_FREQ:
            raise ShapeError(
                f"backbone input must be (N, 1, T, {INPUT_FREQ}), got {x.shape}"
            )
        if x.shape[2] % 2 != 0 or x.shape[2] < 2:
            raise ShapeError(f"backbone input T must be even and >= 2, got {x.shape[2]}")
        h = ops.relu(ops.batchnorm(ops.conv2d(x, self.conv0), self.bn0))
        feats = []
        for blocks in self.stages:
            for block in blocks:
                h = block(h)
            feats.append(h)
        return feats

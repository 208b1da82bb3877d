"""Aggregation strategies over backbone stage maps, and the embedding head.

Four strategies share the scoring path (every one ends in a 512-dim
embedding):

* ``baseline``   — last stage map only: C4 -> stats_pool -> head.
* ``mfa_s34``    — C4 projected to C3's width, frequency-upsampled, fused
                   with C3, pooled.
* ``mea_fpm``    — top-down pyramid keeping every level; each level gets its
                   own 3x3 smoothing conv, is pooled, and the pooled vectors
                   are concatenated lowest-stage-first.
* ``bmfa``       — a top-down branch and a bottom-up branch, each refined by
                   a 3x3 conv and pooled to 2048 dims; head input is
                   [h_bt, h_tb].

The merge operation at every fusion point is selectable: ``add``, ``concat``
(with a 1x1 conv restoring the channel count), or ``afm``.

Top-down step (highest stage passes through unchanged):

    F_i = fuse(Upsample(BN(Wtb_i * F_{i+1})), BN(Wlc_i * C_i))

Bottom-up step (lowest stage passes through unchanged); Down is a 3x3
channel-preserving conv with stride 2 in frequency only:

    F_i = fuse(BN(Wbt_i * Down(F_{i-1})), BN(Wlc_i * C_i))

``stages`` restricts either pyramid to a contiguous run of backbone stages
(e.g. (3, 4)) for ablations; adjacent stage maps always differ by exactly a
factor 2 in frequency, which is what the up/down steps assume.
"""

from __future__ import annotations

from . import ops
from .afm import Afm
from .autograd import Node
from .backbone import CHANNELS
from .errors import ValidationError
from .init import ParamFactory

STRATEGIES = ("baseline", "mfa_s34", "mea_fpm", "bmfa")
FUSIONS = ("add", "concat", "afm")
POOLED_DIM = 2048  # every stage map flattens to C_i * F_i = 1024 -> mean+std


def check_stages(stages) -> tuple[int, ...]:
    stages = tuple(int(s) for s in stages)
    ok = (
        len(stages) >= 2
        and all(s in (1, 2, 3, 4) for s in stages)
        and all(b - a == 1 for a, b in zip(stages, stages[1:]))
    )
    if not ok:
        raise ValidationError(
            f"stages must be a contiguous ascending run within 1..4 "
            f"of length >= 2, got {list(stages)}"
        )
    return stages


class AddFuse:
    def __call__(self, x: Node, y: Node) -> Node:
        return ops.add(x, y)


class ConcatFuse:
    """Channel concatenation followed by a 1x1 conv restoring C channels."""

    def __init__(self, f: ParamFactory, name: str, channels: int):
        self.restore = f.conv(f"{name}.restore", channels, 2 * channels, (1, 1))
        self.bn = f.batchnorm(f"{name}.bn", channels)

    def __call__(self, x: Node, y: Node) -> Node:
        return ops.batchnorm(ops.conv2d(ops.concat_channels(x, y), self.restore), self.bn)


def make_fuse(f: ParamFactory, fusion: str, prefix: str, stage: int,
              channels: int, r: int):
    if fusion == "add":
        return AddFuse()
    if fusion == "concat":
        return ConcatFuse(f, f"{prefix}.cat{stage}", channels)
    if fusion == "afm":
        return Afm(f, f"{prefix}.afm{stage}", channels, r)
    raise ValidationError(f"fusion must be one of {FUSIONS}, got {fusion!r}")


class TopDownCore:
    """The iterative top-down chain, returning the map at every stage."""

    def __init__(self, f: ParamFactory, name: str, fusion: str,
                 stages: tuple[int, ...], r: int):
        self.stages = check_stages(stages)
        self.tb = {}
        self.bn_tb = {}
        self.lat = {}
        self.bn_lat = {}
        self.fuse = {}
        for i in self.stages[:-1]:
            ci, c_up = CHANNELS[i - 1], CHANNELS[i]
            self.tb[i] = f.conv(f"{name}.Wtb{i}", ci, c_up, (1, 1))
            self.bn_tb[i] = f.batchnorm(f"{name}.bn_tb{i}", ci)
            self.lat[i] = f.conv(f"{name}.Wlc{i}", ci, ci, (1, 1))
            self.bn_lat[i] = f.batchnorm(f"{name}.bn_lc{i}", ci)
            self.fuse[i] = make_fuse(f, fusion, name, i, ci, r)

    def maps(self, feats: list[Node]) -> dict[int, Node]:
        out = {self.stages[-1]: feats[self.stages[-1] - 1]}
        for i in reversed(self.stages[:-1]):
            x = ops.upsample_bilinear_freq(
                ops.batchnorm(ops.conv2d(out[i + 1], self.tb[i]), self.bn_tb[i])
            )
            y = ops.batchnorm(ops.conv2d(feats[i - 1], self.lat[i]), self.bn_lat[i])
            out[i] = self.fuse[i](x, y)
        return out


class TopDownBranch:
    out_dim = POOLED_DIM

    def __init__(self, f: ParamFactory, fusion: str, stages: tuple[int, ...],
                 r: int, name: str = "topdown"):
        self.core = TopDownCore(f, name, fusion, stages, r)
        c = CHANNELS[self.core.stages[0] - 1]
        self.refine = f.conv(f"{name}.refine", c, c, (3, 3))
        self.bn_refine = f.batchnorm(f"{name}.bn_refine", c)

    def __call__(self, feats: list[Node]) -> Node:
        fmap = self.core.maps(feats)[self.core.stages[0]]
        fmap = ops.relu(ops.batchnorm(ops.conv2d(fmap, self.refine), self.bn_refine))
        return ops.stats_pool(fmap)


class BottomUpBranch:
    out_dim = POOLED_DIM

    def __init__(self, f: ParamFactory, fusion: str, stages: tuple[int, ...],
                 r: int, name: str = "bottomup"):
        self.stages = check_stages(stages)
        self.down = {}
        self.bt = {}
        self.bn_bt = {}
        self.lat = {}
        self.bn_lat = {}
        self.fuse = {}
        for i in self.stages[1:]:
            c_prev, ci = CHANNELS[i - 2], CHANNELS[i - 1]
            self.down[i] = f.conv(f"{name}.down{i}", c_prev, c_prev, (3, 3), (1, 2))
            self.bt[i] = f.conv(f"{name}.Wbt{i}", ci, c_prev, (1, 1))
            self.bn_bt[i] = f.batchnorm(f"{name}.bn_bt{i}", ci)
            self.lat[i] = f.conv(f"{name}.Wlc{i}", ci, ci, (1, 1))
            self.bn_lat[i] = f.batchnorm(f"{name}.bn_lc{i}", ci)
            self.fuse[i] = make_fuse(f, fusion, name, i, ci, r)
        c = CHANNELS[self.stages[-1] - 1]
        self.refine = f.conv(f"{name}.refine", c, c, (3, 3))
        self.bn_refine = f.batchnorm(f"{name}.bn_refine", c)

    def __call__(self, feats: list[Node]) -> Node:
        cur = feats[self.stages[0] - 1]
        for i in self.stages[1:]:
            down = ops.conv2d(cur, self.down[i])
            x = ops.batchnorm(ops.conv2d(down, self.bt[i]), self.bn_bt[i])
            y = ops.batchnorm(ops.conv2d(feats[i - 1], self.lat[i]), self.bn_lat[i])
            cur = self.fuse[i](x, y)
        cur = ops.relu(ops.batchnorm(ops.conv2d(cur, self.refine), self.bn_refine))
        return ops.stats_pool(cur)


class BaselineAgg:
    out_dim = POOLED_DIM

    def __init__(self, f: ParamFactory, fusion, stages, r):
        if fusion is not None:
            raise ValidationError("baseline accepts no fusion choice")

    def __call__(self, feats: list[Node]) -> Node:
        return ops.stats_pool(feats[3])


class MfaS34Agg:
    out_dim = POOLED_DIM

    def __init__(self, f: ParamFactory, fusion: str, stages, r: int,
                 name: str = "mfa"):
        self.proj = f.conv(f"{name}.proj", CHANNELS[2], CHANNELS[3], (1, 1))
        self.fuse = make_fuse(f, fusion, name, 3, CHANNELS[2], r)

    def __call__(self, feats: list[Node]) -> Node:
        projected = ops.upsample_bilinear_freq(ops.conv2d(feats[3], self.proj))
        return ops.stats_pool(self.fuse(feats[2], projected))


class MeaFpmAgg:
    def __init__(self, f: ParamFactory, fusion: str, stages: tuple[int, ...],
                 r: int, name: str = "mea"):
        self.core = TopDownCore(f, name, fusion, stages, r)
        self.smooth = {}
        self.bn_smooth = {}
        for i in self.core.stages:
            c = CHANNELS[i - 1]
            self.smooth[i] = f.conv(f"{name}.smooth{i}", c, c, (3, 3))
            self.bn_smooth[i] = f.batchnorm(f"{name}.bn_smooth{i}", c)
        self.out_dim = POOLED_DIM * len(self.core.stages)

    def __call__(self, feats: list[Node]) -> Node:
        maps = self.core.maps(feats)
        pooled = []
        for i in self.core.stages:
            fmap = ops.relu(
                ops.batchnorm(ops.conv2d(maps[i], self.smooth[i]), self.bn_smooth[i])
            )
            pooled.append(ops.stats_pool(fmap))
        return ops.concat_features(*pooled)


class BmfaAgg:
    out_dim = 2 * POOLED_DIM

    def __init__(self, f: ParamFactory, fusion: str, stages: tuple[int, ...], r: int):
        self.topdown = TopDownBranch(f, fusion, stages, r)
        self.bottomup = BottomUpBranch(f, fusion, stages, r)

    def __call__(self, feats: list[Node]) -> Node:
        h_tb = self.topdown(feats)
        h_bt = self.bottomup(feats)
        return ops.concat_features(h_bt, h_tb)


AGGREGATORS = {
    "baseline": BaselineAgg,
    "mfa_s34": MfaS34Agg,
    "mea_fpm": MeaFpmAgg,
    "bmfa": BmfaAgg,
}


class Head:
    """fc1 + BN + ReLU followed by the linear embedding layer fc2."""

    def __init__(self, f: ParamFactory, in_dim: int, embed_dim: int,
                 name: str = "head"):
        self.embed_dim = embed_dim
        self.fc1_w, self.fc1_b = f.linear(f"{name}.fc1", embed_dim, in_dim)
        self.bn1 = f.batchnorm(f"{name}.bn1", embed_dim)
        self.fc2_w, self.fc2_b = f.linear(f"{name}.fc2", embed_dim, embed_dim)

    def __call__(self, h: Node) -> Node:
        n = h.shape[0]
        z = ops.linear(h, self.fc1_w, self.fc1_b)
        z = ops.batchnorm(ops.reshape(z, (n, self.embed_dim, 1, 1)), self.bn1)
        z = ops.relu(ops.reshape(z, (n, self.embed_dim)))
        return ops.linear(z, self.fc2_w, self.fc2_b)

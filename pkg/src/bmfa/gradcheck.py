"""Finite-difference verification of every analytic gradient.

Each registered check builds a small 64-bit problem — leaf nodes, a forward
closure ending in a scalar loss — and compares backpropagated gradients
against central differences (h = 1e-5) at a seeded sample of coordinates per
tensor. The relative-error denominator is max(|analytic|, |numeric|, 1e-8).
Checks cover every differentiable kernel plus three composites: a residual
block, the attentional fusion module, and a full tiny network on a (1,1,8,64)
input.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import ops
from .afm import Afm
from .autograd import Node, backward, zero_grads
from .backbone import ResidualBlock
from .errors import ShapeError, ValidationError
from .init import ParamFactory
from .model import Model
from .training import am_softmax_loss

DEFAULT_TOLERANCE = 1e-4
STEP = 1e-5
MAX_COORDS = 6


@dataclass
class GradCheckReport:
    op: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def max_rel_err(params: dict[str, Node], fn, rng: np.random.Generator,
                h: float = STEP, max_coords: int = MAX_COORDS) -> float:
    """Worst relative error between .grad and central differences of fn().

    fn must rebuild its graph from the leaves' current values on every call
    and return a scalar loss node; the leaves in *params* are probed at up to
    max_coords sampled coordinates each.
    """
    for p in params.values():
        if p.dtype != np.float64:
            raise ValidationError("gradient checking requires float64 leaves")
    zero_grads(params.values())
    loss = fn()
    if loss.value.shape != ():
        raise ShapeError(f"gradcheck loss must be scalar, got {loss.value.shape}")
    backward(loss)
    grads = {
        n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
        for n, p in params.items()
    }
    worst = 0.0
    for name, p in params.items():
        flat = p.value.reshape(-1)
        gflat = grads[name].reshape(-1)
        k = min(max_coords, flat.size)
        for i in rng.choice(flat.size, size=k, replace=False):
            keep = flat[i]
            flat[i] = keep + h
            lp = float(fn().value)
            flat[i] = keep - h
            lm = float(fn().value)
            flat[i] = keep
            numeric = (lp - lm) / (2.0 * h)
            analytic = float(gflat[i])
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, rel)
    return worst


REGISTRY: dict = {}


def register(name: str):
    def deco(builder):
        REGISTRY[name] = builder
        return builder

    return deco


def _proj_loss(rng, out_shape):
    proj = rng.standard_normal(out_shape)
    return lambda node: ops.dot_const(node, proj)


def _reset(bns) -> None:
    for s in bns:
        s.running_mean[...] = 0.0
        s.running_var[...] = 1.0


def _conv_builder(k, stride, bias):
    def build(rng):
        cin, cout = 3, 4
        t = max(k[0], 5)
        fdim = max(k[1], 6)
        x = Node(rng.standard_normal((2, cin, t, fdim)))
        w = Node(0.5 * rng.standard_normal((cout, cin) + k))
        b = Node(rng.standard_normal(cout)) if bias else None
        p = ops.ConvParams(w, b, stride, (k[0] // 2, k[1] // 2))
        ot = (t - 1) // stride[0] + 1
        of = (fdim - 1) // stride[1] + 1
        loss = _proj_loss(rng, (2, cout, ot, of))
        params = {"x": x, "weight": w}
        if bias:
            params["bias"] = b
        return params, lambda: loss(ops.conv2d(x, p))

    return build


register("conv2d_3x3")(_conv_builder((3, 3), (1, 1), bias=True))
register("conv2d_3x3_s22")(_conv_builder((3, 3), (2, 2), bias=False))
register("conv2d_3x3_s12")(_conv_builder((3, 3), (1, 2), bias=False))
register("conv2d_1x1")(_conv_builder((1, 1), (1, 1), bias=False))
register("conv2d_7x7")(_conv_builder((7, 7), (1, 1), bias=False))


@register("batchnorm_train")
def _bn_train(rng):
    c = 3
    x = Node(rng.standard_normal((2, c, 4, 5)))
    state = ops.make_batchnorm(c, np.float64)
    state.gamma.value[...] = rng.standard_normal(c)
    state.beta.value[...] = rng.standard_normal(c)
    loss = _proj_loss(rng, x.shape)

    def fn():
        _reset([state])
        return loss(ops.batchnorm(x, state))

    return {"x": x, "gamma": state.gamma, "beta": state.beta}, fn


@register("batchnorm_infer")
def _bn_infer(rng):
    c = 3
    x = Node(rng.standard_normal((2, c, 4, 5)))
    state = ops.make_batchnorm(c, np.float64, mode="infer")
    state.gamma.value[...] = rng.standard_normal(c)
    state.beta.value[...] = rng.standard_normal(c)
    state.running_mean[...] = rng.standard_normal(c)
    state.running_var[...] = rng.uniform(0.5, 2.0, c)
    loss = _proj_loss(rng, x.shape)
    return ({"x": x, "gamma": state.gamma, "beta": state.beta},
            lambda: loss(ops.batchnorm(x, state)))


@register("relu")
def _relu(rng):
    v = rng.standard_normal((2, 3, 4, 5))
    x = Node(v + 0.3 * np.sign(v))  # keep coordinates away from the kink
    loss = _proj_loss(rng, x.shape)
    return {"x": x}, lambda: loss(ops.relu(x))


@register("tanh")
def _tanh(rng):
    x = Node(rng.standard_normal((2, 3, 4, 5)))
    loss = _proj_loss(rng, x.shape)
    return {"x": x}, lambda: loss(ops.tanh(x))


@register("elementwise")
def _elementwise(rng):
    # the fusion arithmetic (1+s)*x + (1-s)*y exercises add/mul/scalar ops
    s = Node(rng.standard_normal((2, 3, 4, 5)))
    x = Node(rng.standard_normal((2, 3, 4, 5)))
    y = Node(rng.standard_normal((2, 3, 4, 5)))
    loss = _proj_loss(rng, x.shape)

    def fn():
        fused = ops.add(
            ops.mul(ops.add_scalar(s, 1.0), x),
            ops.mul(ops.rsub_scalar(s, 1.0), y),
        )
        return loss(fused)

    return {"s": s, "x": x, "y": y}, fn


@register("upsample_bilinear_freq")
def _upsample(rng):
    x = Node(rng.standard_normal((2, 3, 4, 6)))
    loss = _proj_loss(rng, (2, 3, 4, 12))
    return {"x": x}, lambda: loss(ops.upsample_bilinear_freq(x))


@register("concat_channels")
def _concat(rng):
    x = Node(rng.standard_normal((2, 3, 4, 5)))
    y = Node(rng.standard_normal((2, 2, 4, 5)))
    loss = _proj_loss(rng, (2, 5, 4, 5))
    return {"x": x, "y": y}, lambda: loss(ops.concat_channels(x, y))


@register("stats_pool")
def _stats_pool(rng):
    x = Node(rng.standard_normal((2, 3, 7, 4)))
    loss = _proj_loss(rng, (2, 24))
    return {"x": x}, lambda: loss(ops.stats_pool(x))


@register("linear")
def _linear(rng):
    x = Node(rng.standard_normal((3, 6)))
    w = Node(rng.standard_normal((4, 6)))
    b = Node(rng.standard_normal(4))
    loss = _proj_loss(rng, (3, 4))
    return ({"x": x, "w": w, "b": b}, lambda: loss(ops.linear(x, w, b)))


@register("matmul")
def _matmul(rng):
    a = Node(rng.standard_normal((3, 5)))
    b = Node(rng.standard_normal((5, 4)))
    loss = _proj_loss(rng, (3, 4))
    return {"a": a, "b": b}, lambda: loss(ops.matmul(a, b))


@register("l2_normalize")
def _l2_normalize(rng):
    x = Node(rng.standard_normal((3, 6)) + 0.5)
    loss = _proj_loss(rng, (3, 6))
    return {"x": x}, lambda: loss(ops.l2_normalize(x, axis=1))


@register("softmax_xent")
def _softmax_xent(rng):
    logits = Node(rng.standard_normal((5, 4)))
    labels = rng.integers(0, 4, 5)
    return {"logits": logits}, lambda: ops.softmax_cross_entropy(logits, labels)


@register("am_softmax")
def _am_softmax(rng):
    emb = Node(rng.standard_normal((5, 16)))
    weights = Node(rng.standard_normal((7, 16)))
    labels = rng.integers(0, 7, 5)
    return ({"emb": emb, "weights": weights},
            lambda: am_softmax_loss(emb, weights, labels)[0])


@register("residual_block")
def _residual_block(rng):
    f = ParamFactory(int(rng.integers(2 ** 31)), np.float64)
    block = ResidualBlock(f, "block", cin=3, cout=4, stride=(2, 2))
    x = Node(rng.standard_normal((2, 3, 6, 8)))
    loss = _proj_loss(rng, (2, 4, 3, 4))
    bns = list(f.bns.values())

    def fn():
        _reset(bns)
        return loss(block(x))

    params = {"x": x, **f.params}
    return params, fn


@register("afm")
def _afm(rng):
    f = ParamFactory(int(rng.integers(2 ** 31)), np.float64)
    afm = Afm(f, "afm", channels=8, r=4)
    x = Node(rng.standard_normal((2, 8, 3, 4)))
    y = Node(rng.standard_normal((2, 8, 3, 4)))
    loss = _proj_loss(rng, x.shape)
    bns = list(f.bns.values())

    def fn():
        _reset(bns)
        return loss(afm(x, y))

    return {"x": x, "y": y, **f.params}, fn


@register("tiny_network")
def _tiny_network(rng):
    """Full bmfa+afm model, train-mode BN, on a (2,1,8,64) input; probes the
    input plus a seeded sample of parameter tensors. Batch 2, not 1: the
    head's batch norm has zero batch variance at batch 1 and the whole
    network collapses to a constant."""
    model = Model(strategy="bmfa", fusion="afm", seed=int(rng.integers(2 ** 31)),
                  num_classes=None, dtype=np.float64)
    model.set_mode("train")
    x = Node(rng.standard_normal((2, 1, 8, 64)))
    loss = _proj_loss(rng, (2, 512))
    names = sorted(model.params)
    picked = [names[i] for i in rng.choice(len(names), size=10, replace=False)]
    bns = list(model.bns.values())

    def fn():
        _reset(bns)
        return loss(model.embed(x))

    return {"input": x, **{n: model.params[n] for n in picked}}, fn


def available() -> list[str]:
    return sorted(REGISTRY)


def run_check(name: str, seed: int = 0,
              tolerance: float = DEFAULT_TOLERANCE) -> GradCheckReport:
    if name not in REGISTRY:
        raise ValidationError(f"unknown gradient check {name!r}; "
                              f"available: {', '.join(available())}")
    rng = np.random.default_rng((seed, zlib.crc32(name.encode())))
    params, fn = REGISTRY[name](rng)
    return GradCheckReport(name, max_rel_err(params, fn, rng), tolerance)


def run_all(filt: str | None = None, seed: int = 0,
            tolerance: float = DEFAULT_TOLERANCE) -> list[GradCheckReport]:
    names = [n for n in available() if filt is None or filt in n]
    if not names:
        raise ValidationError(f"no gradient checks match filter {filt!r}")
    return [run_check(n, seed, tolerance) for n in names]

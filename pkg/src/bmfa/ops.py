"""Differentiable kernels over (N, C, T, F) tensors.

Every operation validates its input contract, computes the forward map with
numpy (convolutions go through the selected kernel backend) and attaches a
hand-derived vector-Jacobian product. Mixed precision inside one graph is
rejected: training runs in float32, gradient checking in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autograd import Node
from .errors import ShapeError, ValidationError

VAR_CLAMP = 1e-10  # variance floor inside stats_pool, before the square root
NORM_CLAMP = 1e-12  # length floor inside l2_normalize


def _same_dtype(*nodes: Node) -> np.dtype:
    dtypes = {n.dtype for n in nodes}
    if len(dtypes) != 1:
        raise ShapeError(f"mixed precision in one graph: {sorted(map(str, dtypes))}")
    return nodes[0].dtype


# ---------------------------------------------------------------------------
# parameter records


@dataclass
class ConvParams:
    """One convolution: weight (Cout,Cin,kT,kF), optional bias, stride, padding."""

    weight: Node
    bias: Node | None = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.weight.value.ndim != 4:
            raise ShapeError(f"conv weight must be 4-D, got {self.weight.shape}")
        _, _, kT, kF = self.weight.shape
        if kT % 2 == 0 or kF % 2 == 0:
            raise ValidationError(f"conv kernel dims must be odd, got {kT}x{kF}")
        if any(s not in (1, 2) for s in self.stride):
            raise ValidationError(f"conv stride components must be 1 or 2, got {self.stride}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match Cout {self.weight.shape[0]}"
            )


@dataclass
class BatchNormState:
    """Per-channel affine plus running statistics.

    ``mode`` is explicit state: ``train`` normalizes by batch statistics over
    (N, T, F) and folds them into the running values with weight ``momentum``
    (new = (1 - momentum) * old + momentum * batch); ``infer`` normalizes by
    the running values. Population variance is used throughout.
    """

    gamma: Node
    beta: Node
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"

    def __post_init__(self):
        if self.eps <= 0:
            raise ValidationError(f"batchnorm eps must be > 0, got {self.eps}")
        if np.any(self.running_var < 0):
            raise ValidationError("batchnorm running_var must be >= 0 elementwise")
        if self.mode not in ("train", "infer"):
            raise ValidationError(f"batchnorm mode must be 'train' or 'infer', got {self.mode!r}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def make_batchnorm(channels: int, dtype=np.float32, **kw) -> BatchNormState:
    return BatchNormState(
        gamma=Node(np.ones(channels, dtype=dtype)),
        beta=Node(np.zeros(channels, dtype=dtype)),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
        **kw,
    )


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Node, p: ConvParams) -> Node:
    """Cross-correlation of x (N,Cin,T,F); output follows the floor formula."""
    inputs = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    _same_dtype(*inputs)
    if x.value.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D, got {x.shape}")
    N, Cin, T, F = x.shape
    Cout, wCin, kT, kF = p.weight.shape
    if Cin != wCin:
        raise ShapeError(f"conv2d: input has {Cin} channels, weight expects {wCin}")
    pT, pF = p.padding
    if T + 2 * pT < kT or F + 2 * pF < kF:
        raise ShapeError(
            f"conv2d: padded input ({T + 2 * pT}x{F + 2 * pF}) smaller than kernel ({kT}x{kF})"
        )
    y = kernels.conv2d_forward(x.value, p.weight.value, p.stride, p.padding)
    if p.bias is not None:
        y = y + p.bias.value.reshape(1, Cout, 1, 1)

    def vjp(g):
        gx, gw = kernels.conv2d_backward(
            x.value, p.weight.value, p.stride, p.padding, np.ascontiguousarray(g)
        )
        if p.bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Node(y, inputs, vjp)


# ---------------------------------------------------------------------------
# normalization


def batchnorm(x: Node, s: BatchNormState) -> Node:
    _same_dtype(x, s.gamma, s.beta)
    if x.value.ndim != 4:
        raise ShapeError(f"batchnorm input must be 4-D, got {x.shape}")
    N, C, T, F = x.shape
    if C != s.channels:
        raise ShapeError(f"batchnorm: input has {C} channels, state has {s.channels}")
    axes = (0, 2, 3)
    gamma = s.gamma.value.reshape(1, C, 1, 1)

    if s.mode == "train":
        m = N * T * F
        if m == 0:
            raise ShapeError("batchnorm: zero-size batch in train mode")
        mu = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        s.running_mean *= 1.0 - s.momentum
        s.running_mean += s.momentum * mu
        s.running_var *= 1.0 - s.momentum
        s.running_var += s.momentum * var
    else:
        mu = s.running_mean
        var = s.running_var

    inv = 1.0 / np.sqrt(var + s.eps)
    xhat = (x.value - mu.reshape(1, C, 1, 1)) * inv.reshape(1, C, 1, 1)
    y = gamma * xhat + s.beta.value.reshape(1, C, 1, 1)
    train = s.mode == "train"

    def vjp(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        if train:
            dxhat = g * gamma
            dx = (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            ) * inv.reshape(1, C, 1, 1)
        else:
            dx = g * gamma * inv.reshape(1, C, 1, 1)
        return dx, dgamma, dbeta

    return Node(y, (x, s.gamma, s.beta), vjp)


# ---------------------------------------------------------------------------
# elementwise


def relu(x: Node) -> Node:
    y = np.maximum(x.value, 0)

    def vjp(g):
        return (g * (x.value > 0),)

    return Node(y, (x,), vjp)


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return Node(y, (x,), vjp)


def add(x: Node, y: Node) -> Node:
    _same_dtype(x, y)
    if x.shape != y.shape:
        raise ShapeError(f"add: shapes differ {x.shape} vs {y.shape}")
    return Node(x.value + y.value, (x, y), lambda g: (g, g))


def sub(x: Node, y: Node) -> Node:
    _same_dtype(x, y)
    if x.shape != y.shape:
        raise ShapeError(f"sub: shapes differ {x.shape} vs {y.shape}")
    return Node(x.value - y.value, (x, y), lambda g: (g, -g))


def mul(x: Node, y: Node) -> Node:
    _same_dtype(x, y)
    if x.shape != y.shape:
        raise ShapeError(f"mul: shapes differ {x.shape} vs {y.shape}")
    return Node(x.value * y.value, (x, y), lambda g: (g * y.value, g * x.value))


def add_scalar(x: Node, c: float) -> Node:
    """x + c with the scalar broadcast over every element."""
    return Node(x.value + x.dtype.type(c), (x,), lambda g: (g,))


def rsub_scalar(x: Node, c: float) -> Node:
    """c - x with the scalar broadcast over every element."""
    return Node(x.dtype.type(c) - x.value, (x,), lambda g: (-g,))


def scale(x: Node, c: float) -> Node:
    """c * x for a python scalar c."""
    c = x.dtype.type(c)
    return Node(c * x.value, (x,), lambda g: (c * g,))


def add_const(x: Node, a: np.ndarray) -> Node:
    """x + a for a constant array a of the same shape (no gradient into a)."""
    a = np.asarray(a, dtype=x.dtype)
    if a.shape != x.value.shape:
        raise ShapeError(f"add_const: shapes differ {x.shape} vs {a.shape}")
    return Node(x.value + a, (x,), lambda g: (g,))


# ---------------------------------------------------------------------------
# resampling and stacking


_UPSAMPLE_CACHE: dict = {}


def _upsample_matrix(F: int, dtype) -> np.ndarray:
    """(2F, F) interpolation matrix: half-pixel source grid, edges clamped."""
    key = (F, np.dtype(dtype))
    m = _UPSAMPLE_CACHE.get(key)
    if m is None:
        m = np.zeros((2 * F, F), dtype=dtype)
        for dst in range(2 * F):
            src = (dst + 0.5) / 2.0 - 0.5
            src = min(max(src, 0.0), F - 1.0)
            f0 = int(np.floor(src))
            f1 = min(f0 + 1, F - 1)
            w1 = src - f0
            m[dst, f0] += 1.0 - w1
            m[dst, f1] += w1
        _UPSAMPLE_CACHE[key] = m
    return m


def upsample_bilinear_freq(x: Node, factor: int = 2) -> Node:
    """Double the frequency axis by bilinear interpolation; only factor 2."""
    if factor != 2:
        raise ValidationError(f"upsample factor must be 2, got {factor}")
    if x.value.ndim != 4:
        raise ShapeError(f"upsample input must be 4-D, got {x.shape}")
    F = x.shape[3]
    m = _upsample_matrix(F, x.dtype)
    y = x.value @ m.T

    def vjp(g):
        return (g @ m,)

    return Node(y, (x,), vjp)


def concat_channels(x: Node, y: Node) -> Node:
    _same_dtype(x, y)
    if x.value.ndim != 4 or y.value.ndim != 4:
        raise ShapeError("concat_channels inputs must be 4-D")
    if x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
        raise ShapeError(f"concat_channels: N/T/F mismatch {x.shape} vs {y.shape}")
    cx = x.shape[1]
    out = np.concatenate([x.value, y.value], axis=1)

    def vjp(g):
        return g[:, :cx], g[:, cx:]

    return Node(out, (x, y), vjp)


def stats_pool(x: Node) -> Node:
    """Per-dimension mean and standard deviation over time.

    (C, F) flattens C-major into D = C*F; the output is (N, 2D): means then
    standard deviations, population variance clamped at VAR_CLAMP before the
    square root.
    """
    if x.value.ndim != 4:
        raise ShapeError(f"stats_pool input must be 4-D, got {x.shape}")
    N, C, T, F = x.shape
    D = C * F
    z = np.ascontiguousarray(x.value.transpose(0, 1, 3, 2)).reshape(N, D, T)
    mu = z.mean(axis=2)
    centered = z - mu[:, :, None]
    var = (centered * centered).mean(axis=2)
    clamped = var < VAR_CLAMP
    sd = np.sqrt(np.maximum(var, x.dtype.type(VAR_CLAMP)))
    out = np.concatenate([mu, sd], axis=1)

    def vjp(g):
        gmu = g[:, :D]
        gsd = np.where(clamped, 0.0, g[:, D:])
        gz = gmu[:, :, None] / T + (gsd / (T * sd))[:, :, None] * centered
        return (np.ascontiguousarray(gz.reshape(N, C, F, T).transpose(0, 1, 3, 2)),)

    return Node(out, (x,), vjp)


def concat_features(*xs: Node) -> Node:
    """Concatenate 2-D (N, D_i) feature blocks along the feature axis."""
    if len(xs) < 2:
        raise ValidationError("concat_features needs at least two inputs")
    _same_dtype(*xs)
    n = xs[0].shape[0]
    for x in xs:
        if x.value.ndim != 2 or x.shape[0] != n:
            raise ShapeError(f"concat_features: rows must agree, got {[x.shape for x in xs]}")
    widths = [x.shape[1] for x in xs]
    edges = np.cumsum([0] + widths)
    out = np.concatenate([x.value for x in xs], axis=1)

    def vjp(g):
        return tuple(g[:, a:b] for a, b in zip(edges[:-1], edges[1:]))

    return Node(out, xs, vjp)


# ---------------------------------------------------------------------------
# dense / vector ops


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """Affine map y = x @ w.T + b for x (N, Din), w (Dout, Din)."""
    inputs = (x, w) if b is None else (x, w, b)
    _same_dtype(*inputs)
    if x.value.ndim != 2 or w.value.ndim != 2:
        raise ShapeError(f"linear expects 2-D x and w, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: x has {x.shape[1]} features, w expects {w.shape[1]}")
    y = x.value @ w.value.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"linear bias shape {b.shape} != ({w.shape[0]},)")
        y = y + b.value

    def vjp(g):
        gx = g @ w.value
        gw = g.T @ x.value
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return Node(y, inputs, vjp)


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    orig = x.shape
    y = x.value.reshape(shape)

    def vjp(g):
        return (g.reshape(orig),)

    return Node(y, (x,), vjp)


def l2_normalize(x: Node, axis: int) -> Node:
    """Scale slices along *axis* to unit length; lengths below NORM_CLAMP are
    treated as the constant NORM_CLAMP (their direction carries no gradient
    through the length)."""
    n = np.sqrt((x.value * x.value).sum(axis=axis, keepdims=True))
    clamped = n < NORM_CLAMP
    nc = np.maximum(n, x.dtype.type(NORM_CLAMP))
    y = x.value / nc

    def vjp(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        full = (g - y * proj) / nc
        return (np.where(clamped, g / nc, full),)

    return Node(y, (x,), vjp)


def matmul(a: Node, b: Node) -> Node:
    _same_dtype(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    y = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Node(y, (a, b), vjp)


def softmax_cross_entropy(logits: Node, labels: np.ndarray) -> Node:
    """Mean cross-entropy of rows of *logits* against integer *labels*."""
    if logits.value.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects 2-D logits, got {logits.shape}")
    N, K = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (N,):
        raise ShapeError(f"labels shape {labels.shape} != ({N},)")
    if labels.min() < 0 or labels.max() >= K:
        raise ValidationError(f"labels must lie in [0, {K}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    loss = -logp[np.arange(N), labels].mean()

    def vjp(g):
        p = ez / sez
        p[np.arange(N), labels] -= 1.0
        return (g * p / N,)

    return Node(np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


def dot_const(x: Node, c: np.ndarray) -> Node:
    """Scalar projection sum(x * c) against a constant; gradcheck's loss head."""
    c = np.asarray(c, dtype=x.dtype)
    if c.shape != x.value.shape:
        raise ShapeError(f"dot_const: shapes differ {x.shape} vs {c.shape}")
    y = np.asarray((x.value * c).sum(), dtype=x.dtype)

    def vjp(g):
        return (g * c,)

    return Node(y, (x,), vjp)

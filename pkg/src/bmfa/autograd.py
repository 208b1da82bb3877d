"""Reverse-mode differentiation over hand-derived kernel gradients.

A ``Node`` wraps one numpy array. Operations produce fresh nodes carrying a
``vjp`` closure that maps the output gradient to the input gradients; calling
:func:`backward` on a scalar node walks the graph in reverse topological
order and accumulates grads. Parameters are long-lived nodes without parents;
activations are rebuilt every forward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class Node:
    """One array in the computation graph."""

    __slots__ = ("value", "grad", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype})"


def parameter(value) -> Node:
    """Wrap an array as a leaf node whose gradient will be accumulated."""
    return Node(np.asarray(value))


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate gradients of a scalar *loss* into every reachable node."""
    if loss.value.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    loss.grad = np.ones((), dtype=loss.value.dtype)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def zero_grads(nodes) -> None:
    for node in nodes:
        node.grad = None

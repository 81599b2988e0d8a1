"""Tiny reverse-mode differentiation over numpy arrays.

Operations append nodes to a :class:`Tape` in creation order, which is a
valid topological order, so :meth:`Tape.backward` just walks the list in
reverse. Parameter leaves pull values from a :class:`ParameterStore` and
push gradients back into its slots.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ShapeError, TapeEmptyError


class ParameterStore:
    """Named float64 tensors, each with a same-shape gradient slot.

    ``version`` increments on every mutation so dependants can cache.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.decay: dict[str, bool] = {}
        self.version = 0

    def add(self, name: str, value, decay: bool = True) -> None:
        if name in self.values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.decay[name] = decay
        self.version += 1

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def set(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.values[name].shape:
            raise ShapeError(f"{name}: shape {value.shape} != {self.values[name].shape}")
        self.values[name] = value.copy()
        self.version += 1

    def touch(self) -> None:
        """Signal an in-place modification of one or more values."""
        self.version += 1

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    @property
    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, v in self.values.items():
            out.add(name, v.copy(), self.decay[name])
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.set(k, v)


class Node:
    __slots__ = ("value", "parents", "vjps", "name", "requires_grad")

    def __init__(self, value, parents=(), vjps=(), name=None, requires_grad=None):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.name = name
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape


class Tape:
    def __init__(self, store: ParameterStore | None = None):
        self.store = store
        self.nodes: list[Node] = []
        # activation patterns of every ReLU, in call order (for kink detection)
        self.relu_masks: list[np.ndarray] = []
        # side outputs that are not part of the differentiated graph
        self.aux: dict[str, np.ndarray] = {}

    def param(self, name: str) -> Node:
        node = Node(self.store.values[name], name=name, requires_grad=True)
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64), requires_grad=False)

    def op(self, value, parents: Sequence[Node], vjps: Sequence[Callable]) -> Node:
        node = Node(value, tuple(parents), tuple(vjps))
        if node.requires_grad:
            self.nodes.append(node)
        return node

    def backward(self, output: Node, grad=None) -> None:
        """Accumulate ``d(grad . output)/d(param)`` into the store's slots."""
        if not self.nodes:
            raise TapeEmptyError("backward called before any recorded forward pass")
        if grad is None:
            grad = np.ones_like(output.value)
        pending = {id(output): np.asarray(grad, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.name is not None:
                self.store.grads[node.name] += g
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                if not parent.requires_grad:
                    continue
                pg = vjp(g)
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise / linear ---------------------------------------------------

def add(tape: Tape, a: Node, b: Node) -> Node:
    return tape.op(a.value + b.value, (a, b),
                   (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def mul(tape: Tape, a: Node, b: Node) -> Node:
    return tape.op(a.value * b.value, (a, b),
                   (lambda g: _unbroadcast(g * b.value, a.shape),
                    lambda g: _unbroadcast(g * a.value, b.shape)))


def matmul(tape: Tape, x: Node, W: Node) -> Node:
    """``x @ W`` for ``x`` of shape ``(..., n)`` and ``W`` of shape ``(n, m)``."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"matmul: {x.shape} @ {W.shape}")

    def dW(g):
        return x.value.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    return tape.op(x.value @ W.value, (x, W), (lambda g: g @ W.value.T, dW))


def dense(tape: Tape, x: Node, W: Node, b: Node) -> Node:
    return add(tape, matmul(tape, x, W), b)


def relu(tape: Tape, x: Node) -> Node:
    mask = x.value > 0
    tape.relu_masks.append(mask)
    return tape.op(np.where(mask, x.value, 0.0), (x,), (lambda g: g * mask,))


def tanh(tape: Tape, x: Node) -> Node:
    y = np.tanh(x.value)
    return tape.op(y, (x,), (lambda g: g * (1.0 - y * y),))


_TINY = np.finfo(np.float64).tiny


def softplus(tape: Tape, x: Node) -> Node:
    v = x.value
    # floored so that f stays strictly positive when log(1+e^z) underflows
    y = np.maximum(np.logaddexp(0.0, v), _TINY)
    sig = expit(v)
    return tape.op(y, (x,), (lambda g: g * sig,))


def softmax(tape: Tape, x: Node, axis: int = -1) -> Node:
    v = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(v)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return tape.op(y, (x,), (vjp,))


def reshape(tape: Tape, x: Node, shape) -> Node:
    old = x.shape
    return tape.op(x.value.reshape(shape), (x,), (lambda g: g.reshape(old),))


def concat(tape: Tape, xs: Sequence[Node], axis: int = -1) -> Node:
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def make(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            return g[tuple(sl)]
        return vjp

    return tape.op(np.concatenate([x.value for x in xs], axis=axis), xs,
                   [make(i) for i in range(len(xs))])


def take_rows(tape: Tape, E: Node, ids: np.ndarray) -> Node:
    """Embedding lookup ``E[ids]``."""
    def vjp(g):
        out = np.zeros_like(E.value)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, E.shape[1]))
        return out

    return tape.op(E.value[ids], (E,), (vjp,))


def scale_const(tape: Tape, x: Node, c: np.ndarray) -> Node:
    """Multiply by a constant array (e.g. a dropout mask)."""
    return tape.op(x.value * c, (x,), (lambda g: g * c,))


# -- convolution ------------------------------------------------------------

def _shifts(kernel_shape):
    grids = np.meshgrid(*[np.arange(k) - k // 2 for k in kernel_shape], indexing="ij")
    return list(zip(*[g.ravel() for g in grids]))


def _im2col(x: np.ndarray, kernel_shape) -> np.ndarray:
    """``(B, *S, C) -> (B, *S, prod(kernel), C)`` zero-padded 'same' patches."""
    nd = len(kernel_shape)
    pads = [(0, 0)] + [(k // 2, k // 2) for k in kernel_shape] + [(0, 0)]
    xp = np.pad(x, pads)
    spatial = x.shape[1:1 + nd]
    cols = []
    for sh in _shifts(kernel_shape):
        sl = [slice(None)]
        for d in range(nd):
            start = kernel_shape[d] // 2 + sh[d]
            sl.append(slice(start, start + spatial[d]))
        cols.append(xp[tuple(sl)])
    return np.stack(cols, axis=-2)


def _col2im(cols: np.ndarray, kernel_shape, spatial) -> np.ndarray:
    nd = len(kernel_shape)
    B, C = cols.shape[0], cols.shape[-1]
    padded = [s + 2 * (k // 2) for s, k in zip(spatial, kernel_shape)]
    out = np.zeros((B, *padded, C))
    for i, sh in enumerate(_shifts(kernel_shape)):
        sl = [slice(None)]
        for d in range(nd):
            start = kernel_shape[d] // 2 + sh[d]
            sl.append(slice(start, start + spatial[d]))
        out[tuple(sl)] += cols[..., i, :]
    crop = [slice(None)] + [slice(k // 2, k // 2 + s) for s, k in zip(spatial, kernel_shape)]
    return out[tuple(crop)]


def conv_same(tape: Tape, x: Node, K: Node, b: Node) -> Node:
    """'Same' convolution (cross-correlation) with channels-last layout.

    ``x``: ``(B, *spatial, C_in)``; ``K``: ``(*kernel, C_in, C_out)``;
    ``b``: ``(C_out,)``.
    """
    kshape = K.shape[:-2]
    cin, cout = K.shape[-2], K.shape[-1]
    if x.shape[-1] != cin or x.value.ndim != len(kshape) + 2:
        raise ShapeError(f"conv: input {x.shape} incompatible with filter {K.shape}")
    spatial = x.shape[1:-1]
    cols = _im2col(x.value, kshape)
    flat = cols.reshape(*cols.shape[:-2], -1)
    Wm = K.value.reshape(-1, cout)
    y = flat @ Wm + b.value

    def dx(g):
        dflat = g @ Wm.T
        return _col2im(dflat.reshape(cols.shape), kshape, spatial)

    def dK(g):
        return (flat.reshape(-1, flat.shape[-1]).T @ g.reshape(-1, cout)).reshape(K.shape)

    def db(g):
        return g.reshape(-1, cout).sum(axis=0)

    return tape.op(y, (x, K, b), (dx, dK, db))

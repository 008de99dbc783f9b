"""Minimal reverse-mode autodiff over numpy float64 arrays.

Supports exactly the operations the sequence model needs: broadcast
arithmetic, matmul, tanh / exp / log / leaky ReLU, reductions, concat,
row gather, softmax, a straight-through hard one-hot, and a floored
log-abs used for log-Jacobian terms. Gradients are accumulated into
``Var.grad`` by :func:`backward`, which walks the graph in reverse
topological order (iteratively, so deep graphs do not hit the
recursion limit).
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum out prepended axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    # sum over axes that were broadcast from size 1
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Var:
    """Graph node holding a float64 array and its accumulated gradient.

    ``parents`` is a list of ``(Var, vjp)`` pairs where ``vjp`` maps the
    upstream gradient to this parent's contribution.
    """

    __slots__ = ("value", "grad", "requires_grad", "parents")

    def __init__(self, value, requires_grad: bool = False, parents=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents = parents or []
        # interior nodes need grad iff any ancestor does
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in self.parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def param(value) -> Var:
    """Leaf node tracked by the optimizer."""
    return Var(value, requires_grad=True)


def _make(value: Array, parents) -> Var:
    # constants stay out of the graph so backward skips dead branches
    parents = [(p, fn) for p, fn in parents if p.requires_grad]
    return Var(value, parents=parents)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value
    return _make(out, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ])


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value - b.value
    return _make(out, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ])


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value * b.value
    return _make(out, [
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ])


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value / b.value
    return _make(out, [
        (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(-g * a.value / (b.value ** 2), b.value.shape)),
    ])


def neg(a) -> Var:
    a = as_var(a)
    return _make(-a.value, [(a, lambda g: -g)])


def pow_const(a, exponent: float) -> Var:
    a = as_var(a)
    e = float(exponent)
    out = a.value ** e
    return _make(out, [(a, lambda g: g * e * a.value ** (e - 1.0))])


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value @ b.value

    def grad_a(g: Array) -> Array:
        if b.value.ndim == 1:
            return _unbroadcast(np.multiply.outer(g, b.value), a.value.shape)
        ga = g @ np.swapaxes(b.value, -1, -2)
        return _unbroadcast(ga, a.value.shape)

    def grad_b(g: Array) -> Array:
        if a.value.ndim == 1:
            return _unbroadcast(np.multiply.outer(a.value, g), b.value.shape)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(gb, b.value.shape)

    return _make(out, [(a, grad_a), (b, grad_b)])


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)
    return _make(out, [(a, lambda g: g * (1.0 - out ** 2))])


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _make(out, [(a, lambda g: g * out)])


def log(a) -> Var:
    a = as_var(a)
    return _make(np.log(a.value), [(a, lambda g: g / a.value)])


def leaky_relu(a, slope: float = 0.2) -> Var:
    a = as_var(a)
    pos = a.value > 0
    out = np.where(pos, a.value, slope * a.value)
    return _make(out, [(a, lambda g: g * np.where(pos, 1.0, slope))])


def log_abs_floor(a, floor: float = 1e-8) -> Var:
    """log(max(|a|, floor)); gradient is 1/a where |a| > floor, else 0.

    Keeps log-derivative terms finite when a transition map momentarily
    flattens, without biasing the gradient away from the clamp region.
    """
    a = as_var(a)
    mag = np.abs(a.value)
    out = np.log(np.maximum(mag, floor))
    live = mag > floor
    return _make(out, [(a, lambda g: g * np.where(live, 1.0 / np.where(live, a.value, 1.0), 0.0))])


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def grad(g: Array) -> Array:
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape).copy()

    return _make(out, [(a, grad)])


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return _make(a.value.reshape(shape), [(a, lambda g: g.reshape(a.value.shape))])


def transpose(a, axes=None) -> Var:
    a = as_var(a)
    out = np.transpose(a.value, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make(out, [(a, lambda g: np.transpose(g, inv))])


def concat(parts, axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_grad(i):
        lo, hi = offsets[i], offsets[i + 1]

        def grad(g: Array) -> Array:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return grad

    return _make(out, [(p, make_grad(i)) for i, p in enumerate(parts)])


def getitem(a, key) -> Var:
    a = as_var(a)
    out = a.value[key]

    def grad(g: Array) -> Array:
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        return full

    return _make(out, [(a, grad)])


def take_rows(a, idx: Array) -> Var:
    """Gather rows along axis 0; backward scatter-adds into place."""
    a = as_var(a)
    idx = np.asarray(idx)
    out = a.value[idx]

    def grad(g: Array) -> Array:
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return full

    return _make(out, [(a, grad)])


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g: Array) -> Array:
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _make(out, [(a, grad)])


def st_hard_onehot(y) -> Var:
    """Straight-through hard one-hot over the last axis.

    Forward emits onehot(argmax(y)); backward passes the gradient to ``y``
    unchanged, so soft probabilities keep receiving learning signal while
    downstream consumers see a discrete selection.
    """
    y = as_var(y)
    idx = y.value.argmax(axis=-1)
    hard = np.zeros_like(y.value)
    np.put_along_axis(hard, idx[..., None], 1.0, axis=-1)
    return _make(hard, [(y, lambda g: g)])


def stop_grad(a) -> Var:
    a = as_var(a)
    return Var(a.value.copy())


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(out: Var, seed: Array | None = None) -> None:
    """Accumulate d(out)/d(leaf) into ``.grad`` of every reachable Var.

    ``out`` must be scalar unless ``seed`` supplies the upstream gradient.
    """
    if seed is None:
        if out.value.size != 1:
            raise ValueError("backward() without seed needs a scalar output")
        seed = np.ones_like(out.value)

    # iterative topological order over the subgraph that requires grad
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, Array] = {id(out): np.asarray(seed, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        for parent, vjp in node.parents:
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution


def collect_params(obj) -> list[Var]:
    """Flatten nested lists/tuples/dicts of Vars into a parameter list."""
    out: list[Var] = []
    if isinstance(obj, Var):
        if obj.requires_grad:
            out.append(obj)
    elif isinstance(obj, dict):
        for key in sorted(obj):
            out.extend(collect_params(obj[key]))
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            out.extend(collect_params(item))
    return out

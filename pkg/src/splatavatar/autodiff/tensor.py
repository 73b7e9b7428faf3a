"""Tensor type and the reverse-mode engine.

A ``Tensor`` wraps an immutable numpy array. Operations that consume a
tensor with ``requires_grad`` record their parents and a backward closure
on the output, so the graph is built implicitly while the forward pass
runs. ``backward`` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN/Inf values or gradients."""

    def __init__(self, op: str, where: str = "output"):
        self.op = op
        self.where = where
        super().__init__(f"non-finite {where} in operation '{op}'")


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.check_finite = True


_state = _State()


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    prev = _state.check_finite
    _state.check_finite = enabled
    try:
        yield
    finally:
        _state.check_finite = prev


def is_grad_enabled() -> bool:
    return _state.grad_enabled


def _check(arr: np.ndarray, op: str, where: str = "output") -> None:
    if _state.check_finite and not np.isfinite(arr).all():
        raise NonFiniteError(op, where)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = None
        self._parents = ()
        self._backward = None

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __pow__(self, p):
        from . import ops

        return ops.pow(self, p)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops

        return ops.getitem(self, idx)

    # -- method sugar ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        from . import ops

        return ops.max(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        leaf_grads = run_backward([(self, np.asarray(grad, dtype=self.dtype))])
        for leaf, g in leaf_grads.values():
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def make_result(data, parents, backward, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op``; record the graph edge if needed."""
    out = Tensor(data)
    _check(out.data, op)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _toposort(roots):
    order = []
    seen = set()
    stack = [(r, False) for r in roots]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def run_backward(roots) -> dict:
    """Propagate ``[(tensor, grad_array), ...]`` back to the leaves.

    Returns ``{id(leaf): (leaf, grad)}`` for every leaf reached with a
    gradient. Interior nodes are not retained.
    """
    grads = {}
    for t, g in roots:
        if not t.requires_grad:
            continue
        if g.shape != t.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
        grads[id(t)] = grads[id(t)] + g if id(t) in grads else g
    leaves = {}
    for node in reversed(_toposort([t for t, _ in roots if t.requires_grad])):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[id(node)] = (node, g)
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=p.dtype)
            _check(pg, node.op, "gradient")
            if pg.shape != p.shape:
                raise ValueError(f"{node.op}: gradient shape {pg.shape} != input shape {p.shape}")
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg
    return leaves


def grad(output: Tensor, inputs, output_grad=None) -> list:
    """Return gradients of ``output`` with respect to each tensor in ``inputs``.

    Inputs that the output does not depend on get an exact zero gradient.
    """
    if output_grad is None:
        output_grad = np.ones_like(output.data)
    leaves = run_backward([(output, np.asarray(output_grad, dtype=output.dtype))])
    result = []
    for t in inputs:
        hit = leaves.get(id(t))
        result.append(hit[1] if hit is not None else np.zeros_like(t.data))
    return result

"""The closed operation catalog.

Every op takes ``Tensor`` (or array/scalar constants) and returns a new
``Tensor``. Elementwise ops broadcast like numpy; gradients are summed back
to the input shapes. Convolutions use NHWC activations and HWIO kernels.
"""

from __future__ import annotations

import builtins

import numpy as np

from .tensor import Tensor, make_result


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if a_t and not b_t:
        b = as_tensor(b, a)
    elif b_t and not a_t:
        a = as_tensor(a, b)
    elif not a_t and not b_t:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def masked_mul(x: Tensor, mask) -> Tensor:
    """Multiply by a constant (non-differentiable) mask."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=x.dtype)

    def backward(g):
        return (unbroadcast(g * m, x.shape),)

    return make_result(x.data * m, (x,), backward, "masked_mul")


# -- elementwise unary ---------------------------------------------------------

def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def pow(x: Tensor, p: float) -> Tensor:  # noqa: A001
    p = float(p)
    out = x.data ** p

    def backward(g):
        return (g * p * x.data ** (p - 1.0),)

    return make_result(out, (x,), backward, "pow")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def sigmoid(x: Tensor) -> Tensor:
    # exp of -|x| keeps both branches overflow-free
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data).astype(x.dtype)

    def backward(g):
        e = np.exp(-np.abs(x.data))
        s = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * s,)

    return make_result(out, (x,), backward, "softplus")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result(x.data * pos, (x,), lambda g: (g * pos,), "relu")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    # subgradient at 0 is 0 (np.sign(0) == 0)
    sgn = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def clip(x: Tensor, lo=None, hi=None) -> Tensor:
    out = np.clip(x.data, lo, hi)
    inside = out == x.data

    return make_result(out, (x,), lambda g: (g * inside,), "clip")


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


# -- convolution & resampling ---------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    cols = [
        xp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :]
        for i in range(kh)
        for j in range(kw)
    ]
    return np.concatenate(cols, axis=-1)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x: (N, H, W, C); w: (kh, kw, C, O); b: (O,)."""
    n, h, wd, c = x.shape
    kh, kw, cw, o = w.shape
    if cw != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {cw}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d: kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo).reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.reshape(kh * kw * c, o)
    out = (cols @ wmat).reshape(n, ho, wo, o)
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(n * ho * wo, o)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh * kw * c)
            dxp = np.zeros(xp.shape, dtype=x.dtype)
            k = 0
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :] += (
                        dcols[..., k * c : (k + 1) * c]
                    )
                    k += 1
            gx = dxp[:, padding : padding + h, padding : padding + wd, :] if padding else dxp
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_result(out, parents, backward, "conv2d")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of NHWC spatial axes by an integer factor."""
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        return (g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4)),)

    return make_result(out, (x,), backward, "upsample_nearest")


# -- structural ----------------------------------------------------------------

def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return make_result(out, tuple(tensors), backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis if axis >= 0 else tensors[0].ndim + 1 + axis
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in tensors]
    return concat(expanded, axis=ax)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return make_result(np.array(out, copy=True), (x,), backward, "getitem")


def gather(x: Tensor, index, unique: bool = False) -> Tensor:
    """Rows of ``x`` selected by an integer index array (along axis 0)."""
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        if unique:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return make_result(out, (x,), backward, "gather")


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


permute = transpose


# -- reductions ----------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        return (np.array(_expand(g, x.shape, axis, keepdims)),)

    return make_result(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.size // builtins.max(out.size, 1)

    def backward(g):
        return (np.array(_expand(g, x.shape, axis, keepdims)) / count,)

    return make_result(out, (x,), backward, "mean")


def max(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum; the gradient flows to the first maximal element only."""
    if axis is None:
        flat = x.data.reshape(-1)
        k = int(np.argmax(flat))
        out = np.asarray(flat[k])
        if keepdims:
            out = out.reshape((1,) * x.ndim)

        def backward(g):
            gx = np.zeros(x.size, dtype=x.dtype)
            gx[k] = np.asarray(g).reshape(())
            return (gx.reshape(x.shape),)

        return make_result(out, (x,), backward, "max")

    if not isinstance(axis, int):
        raise ValueError("max supports a single axis")
    arg = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, arg, gk, axis=axis)
        return (gx,)

    return make_result(out, (x,), backward, "max")

"""Parameter containers and the handful of layers the networks use."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Walks its attributes to collect named parameters, torch-style."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        found: dict[str, Parameter] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                found[name] = value
            elif isinstance(value, Module):
                found.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        found[f"{name}.{i}"] = item
        return found

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        if strict:
            missing = set(params) - set(state)
            unexpected = set(state) - set(params)
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            if k not in state:
                continue
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32, gain: float = 1.0):
        self.weight = Parameter(_normal(rng, (d_in, d_out), gain / math.sqrt(d_in), dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Conv2d(Module):
    """3x3-style convolution on NHWC tensors with HWIO weights."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int | None = None,
        dtype=np.float32,
        gain: float = math.sqrt(2.0),
        zero: bool = False,
    ):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = kernel * kernel * c_in
        w = np.zeros((kernel, kernel, c_in, c_out), dtype=dtype) if zero else _normal(
            rng, (kernel, kernel, c_in, c_out), gain / math.sqrt(fan_in), dtype
        )
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    d = q.shape[-1]
    scores = (q @ ops.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * (1.0 / math.sqrt(d))
    return ops.softmax(scores) @ v


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ValueError("token dimension must be divisible by the head count")
        self.heads = heads
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.out = Linear(dim, dim, rng, dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return x.reshape(b, t, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def forward(self, xq: Tensor, xkv: Tensor) -> Tensor:
        b, tq, d = xq.shape
        q = self._split(self.q(xq))
        k = self._split(self.k(xkv))
        v = self._split(self.v(xkv))
        o = attention(q, k, v).transpose(0, 2, 1, 3).reshape(b, tq, d)
        return self.out(o)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype, gain=math.sqrt(2.0))
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(x)))


class SelfAttentionBlock(Module):
    """Pre-norm transformer block: x + attn(LN x), then x + mlp(LN x)."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.mlp = MLP(dim, dim * mlp_ratio, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.mlp(self.norm2(x))


class CrossAttentionBlock(Module):
    """Queries attend to a context set; the context is never mixed positionally."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, dtype=np.float32):
        self.norm_q = LayerNorm(dim, dtype)
        self.norm_kv = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.mlp = MLP(dim, dim * mlp_ratio, rng, dtype)

    def forward(self, q: Tensor, context: Tensor) -> Tensor:
        q = q + self.attn(self.norm_q(q), self.norm_kv(context))
        return q + self.mlp(self.norm2(q))

"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .tensor import Tensor, grad, no_grad


@dataclass(frozen=True)
class CatalogEntry:
    fn: Callable[..., Tensor]
    sample: Callable[[np.random.Generator], list]
    epsilon: float = 1e-4


CATALOG: dict[str, CatalogEntry] = {}


def register(name: str, fn: Callable[..., Tensor], sample: Callable[[np.random.Generator], list],
             epsilon: float = 1e-4) -> None:
    """Add an op to the catalog; ``epsilon`` is its default finite-difference step."""
    CATALOG[name] = CatalogEntry(fn, sample, epsilon)


def grad_check(op_name: str, sample_inputs=None, epsilon: float | None = None, seed: int = 0) -> float:
    """Max relative error between backward and central differences.

    The op's output is reduced with fixed random weights so every output
    element contributes. The analytic gradient is computed in float64; the
    finite-difference reference is evaluated in extended precision
    (``np.longdouble``) so its cancellation error stays well below the
    gradients being checked, which matters for reductions such as SSIM whose
    border pixels have gradients near 1e-8.
    """
    entry = CATALOG[op_name]
    if epsilon is None:
        epsilon = entry.epsilon
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    if sample_inputs is None:
        sample_inputs = entry.sample(rng)
    xs = [np.array(a, dtype=np.float64) for a in sample_inputs]
    tensors = [Tensor(x, requires_grad=True) for x in xs]
    out = entry.fn(*tensors)
    weights = rng.standard_normal(out.shape)
    analytic = grad(ops.sum(out * weights), tensors)

    ref_w = weights.astype(np.longdouble)

    def scalar(arrays):
        with no_grad():
            return (entry.fn(*[Tensor(a) for a in arrays]).data * ref_w).sum()

    xs = [x.astype(np.longdouble) for x in xs]
    worst = 0.0
    for k, x in enumerate(xs):
        flat = x.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = scalar(xs)
            flat[i] = orig - epsilon
            fm = scalar(xs)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * epsilon)
        numeric = numeric.astype(np.float64)
        a = analytic[k].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst


def _away_from_zero(rng, shape, lo=0.2, hi=1.5):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _builtin_catalog():
    n = lambda rng, *s: rng.standard_normal(s)  # noqa: E731
    register("add", ops.add, lambda r: [n(r, 3, 4), n(r, 4)])
    register("sub", ops.sub, lambda r: [n(r, 3, 4), n(r, 3, 1)])
    register("mul", ops.mul, lambda r: [n(r, 3, 4), n(r, 3, 4)])
    register("div", ops.div, lambda r: [n(r, 3, 4), r.uniform(0.5, 2.0, (3, 4))])
    register("scalar_mul", lambda x: x * 2.5 + 1.0, lambda r: [n(r, 5)])
    register("neg", ops.neg, lambda r: [n(r, 6)])
    register("pow", lambda x: ops.pow(x, 3.0), lambda r: [_away_from_zero(r, (6,), lo=0.5)])
    register("exp", ops.exp, lambda r: [n(r, 3, 4)])
    register("log", ops.log, lambda r: [r.uniform(0.3, 3.0, (3, 4))])
    register("sqrt", ops.sqrt, lambda r: [r.uniform(0.3, 3.0, (3, 4))])
    register("sigmoid", ops.sigmoid, lambda r: [n(r, 3, 4) * 2])
    register("softplus", ops.softplus, lambda r: [n(r, 3, 4) * 2])
    register("tanh", ops.tanh, lambda r: [n(r, 3, 4)])
    register("relu", ops.relu, lambda r: [_away_from_zero(r, (3, 4))])
    register("abs", ops.abs, lambda r: [_away_from_zero(r, (3, 4))])
    register("clip", lambda x: ops.clip(x, -0.5, 0.5), lambda r: [np.concatenate([
        r.uniform(-0.4, 0.4, 6), r.uniform(0.6, 1.5, 3), r.uniform(-1.5, -0.6, 3)])])
    register("masked_mul", lambda x: ops.masked_mul(x, np.array([[1.0, 0.0, 1.0, 1.0]])), lambda r: [n(r, 3, 4)])
    register("matmul", ops.matmul, lambda r: [n(r, 4, 5), n(r, 5, 3)])
    register("batched_matmul", ops.matmul, lambda r: [n(r, 2, 3, 4), n(r, 2, 4, 3)])
    register("softmax", ops.softmax, lambda r: [n(r, 2, 8)])
    register("layer_norm", ops.layer_norm, lambda r: [n(r, 3, 6), n(r, 6), n(r, 6)])
    register("conv2d", lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1),
             lambda r: [n(r, 1, 5, 5, 2), n(r, 3, 3, 2, 3), n(r, 3)])
    register("conv2d_stride2", lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1),
             lambda r: [n(r, 2, 6, 6, 2), n(r, 3, 3, 2, 2), n(r, 2)])
    register("upsample_nearest", lambda x: ops.upsample_nearest(x, 2), lambda r: [n(r, 1, 3, 3, 2)])
    register("concat", lambda a, b: ops.concat([a, b], axis=1), lambda r: [n(r, 2, 3), n(r, 2, 2)])
    register("getitem", lambda x: x[1:, ::2], lambda r: [n(r, 3, 5)])
    register("reshape", lambda x: ops.reshape(x, (6, 2)), lambda r: [n(r, 3, 4)])
    register("transpose", lambda x: ops.transpose(x, (2, 0, 1)), lambda r: [n(r, 2, 3, 4)])
    register("sum", lambda x: ops.sum(x, axis=1), lambda r: [n(r, 3, 4)])
    register("mean", lambda x: ops.mean(x, axis=0, keepdims=True), lambda r: [n(r, 3, 4)])
    register("max", lambda x: ops.max(x, axis=1), lambda r: [n(r, 3, 4)])
    register("gather", lambda x: ops.gather(x, np.array([2, 0, 2, 1])), lambda r: [n(r, 3, 2)])


_builtin_catalog()

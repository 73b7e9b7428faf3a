"""Named-input computation records: forward once, then backward."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, _toposort, run_backward


class Record:
    """A differentiable computation with a parameter registry.

    ``fn(params, inputs)`` receives dicts of tensors and returns a dict of
    output tensors. ``shapes`` optionally declares the expected input shapes.
    """

    def __init__(self, fn: Callable, params: dict[str, Tensor] | None = None, shapes: dict | None = None):
        self.fn = fn
        self.params = dict(params or {})
        self.shapes = dict(shapes or {})
        self._inputs: dict[str, Tensor] | None = None
        self._outputs: dict[str, Tensor] | None = None

    def forward(self, inputs: dict) -> dict[str, np.ndarray]:
        missing = set(self.shapes) - set(inputs)
        if missing:
            raise KeyError(f"missing inputs: {sorted(missing)}")
        tensors = {}
        for name, value in inputs.items():
            arr = np.asarray(value)
            want = self.shapes.get(name)
            if want is not None and tuple(want) != arr.shape:
                raise ValueError(f"input '{name}' has shape {arr.shape}, expected {tuple(want)}")
            tensors[name] = Tensor(arr, requires_grad=True, name=name)
        outputs = self.fn(self.params, tensors)
        self._inputs = tensors
        self._outputs = outputs
        return {k: v.data for k, v in outputs.items()}

    @property
    def operations(self) -> list[str]:
        """Op names in execution order for the last forward pass."""
        if self._outputs is None:
            return []
        return [t.op for t in _toposort(list(self._outputs.values())) if t.op is not None]

    def backward(self, output_grads: dict) -> dict[str, np.ndarray]:
        if self._outputs is None:
            raise RuntimeError("backward called before forward")
        roots = []
        for name, g in output_grads.items():
            out = self._outputs[name]
            roots.append((out, np.asarray(g, dtype=out.dtype).reshape(out.shape)))
        leaves = run_backward(roots)
        grads = {}
        for table in (self.params, self._inputs):
            for name, t in table.items():
                hit = leaves.get(id(t))
                grads[name] = hit[1] if hit is not None else np.zeros_like(t.data)
        return grads

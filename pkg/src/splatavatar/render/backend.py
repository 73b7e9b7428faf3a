"""Rasterization backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``SPLATAVATAR_BACKEND=python`` (or ``compiled``) forces a choice at
import time and ``use_backend`` switches at runtime.
"""

from __future__ import annotations

import contextlib
import os

from . import _raster_py

try:
    from . import _raster_ext
except ImportError:  # extension not built
    _raster_ext = None

_BACKENDS = {"python": _raster_py}
if _raster_ext is not None:
    _BACKENDS["compiled"] = _raster_ext


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _initial() -> str:
    want = os.environ.get("SPLATAVATAR_BACKEND", "").strip().lower()
    if want:
        if want not in _BACKENDS:
            raise RuntimeError(f"backend {want!r} requested but available are {available_backends()}")
        return want
    return "compiled" if "compiled" in _BACKENDS else "python"


_current = _initial()


def current_backend() -> str:
    return _current


def kernels(name: str | None = None):
    return _BACKENDS[name or _current]


def set_backend(name: str) -> None:
    global _current
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; available: {available_backends()}")
    _current = name


@contextlib.contextmanager
def use_backend(name: str):
    prev = _current
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)

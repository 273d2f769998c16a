"""Backend dispatch for the hot kernels.

The numba backend is used when numba imports and the environment variable
``DELTA_AGG_NUMBA`` is not set to ``0``. The numpy backend is always
available and is the reference the numba loops are tested against.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_numpy

try:
    from . import _kernels_numba
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _kernels_numba = None
    NUMBA_AVAILABLE = False

__all__ = ["NUMBA_AVAILABLE", "backend_name", "get_backend", "set_backend", "use_backend"]

_active: ModuleType


def _default() -> str:
    flag = os.environ.get("DELTA_AGG_NUMBA", "1").strip().lower()
    if NUMBA_AVAILABLE and flag not in {"0", "false", "no", "off"}:
        return "numba"
    return "numpy"


def set_backend(name: str) -> None:
    global _active
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not importable")
        _active = _kernels_numba
    elif name == "numpy":
        _active = _kernels_numpy
    else:
        raise ValueError(f"unknown backend {name!r}")


def get_backend(name: str | None = None) -> ModuleType:
    if name is None:
        return _active
    return _kernels_numba if name == "numba" else _kernels_numpy


def backend_name() -> str:
    return "numba" if _active is _kernels_numba else "numpy"


class use_backend:
    """Context manager that switches the active backend temporarily."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        self._prev = backend_name()
        set_backend(self.name)
        return self

    def __exit__(self, *exc):
        set_backend(self._prev)


set_backend(_default())

"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist:

* ``numba`` -- jitted loops (ricecnn.kernels_numba), used when numba is
  installed; first call per process pays a one-off JIT compile that is cached
  on disk.
* ``numpy`` -- vectorized pure numpy (ricecnn.kernels_numpy), always
  available.

The default is chosen at import time from the RICECNN_BACKEND environment
variable: "numba", "numpy", or "auto" (prefer numba, fall back to numpy).
Tests and benchmarks can switch at runtime with set_backend().
"""

from __future__ import annotations

import os
import warnings

ENV_VAR = "RICECNN_BACKEND"


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _load(name: str):
    if name == "numba":
        from . import kernels_numba as mod
    else:
        from . import kernels_numpy as mod
    return mod


def _resolve(requested: str) -> str:
    requested = requested.strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"unknown backend {requested!r} (expected auto, numba or numpy)"
        )
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _numba_importable():
            raise RuntimeError("numba backend requested but numba is not installed")
        return "numba"
    return "numba" if _numba_importable() else "numpy"


def set_backend(name: str) -> str:
    """Select the kernel backend ("auto", "numba" or "numpy"). Returns the
    resolved name."""
    global _active_name, _active_mod
    resolved = _resolve(name)
    _active_mod = _load(resolved)
    _active_name = resolved
    return resolved


def active_backend() -> str:
    return _active_name


def available_backends() -> list[str]:
    names = ["numpy"]
    if _numba_importable():
        names.insert(0, "numba")
    return names


def kernels():
    """The module implementing the active backend's kernel functions."""
    return _active_mod


_active_name = ""
_active_mod = None
try:
    set_backend(os.environ.get(ENV_VAR, "auto"))
except (ValueError, RuntimeError) as exc:
    warnings.warn(f"{ENV_VAR}: {exc}; falling back to numpy", stacklevel=1)
    set_backend("numpy")

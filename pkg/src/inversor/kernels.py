"""Kernel selection.

The compiled extension is used when it was built; otherwise, or when
``INVERSOR_PURE_PYTHON=1`` is set, the pure-Python twin is used. Both expose
``score_continuation`` and ``score_batch`` with identical results.
"""
import importlib
import os

from . import _fallback


def load(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _fallback
    if name == "cython":
        return importlib.import_module("inversor._kernels")
    raise ValueError(f"unknown kernel implementation {name!r}")


def available():
    names = ["python"]
    try:
        load("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("INVERSOR_PURE_PYTHON", "") not in ("", "0"):
    _active = _fallback
    IMPLEMENTATION = "python"
else:
    try:
        _active = load("cython")
        IMPLEMENTATION = "cython"
    except ImportError:
        _active = _fallback
        IMPLEMENTATION = "python"

score_continuation = _active.score_continuation
score_batch = _active.score_batch

"""Evaluation backend selection: compiled kernel when available, numpy twin
otherwise. Set ``IMU2SEG_BACKEND=python|compiled|auto`` to override."""

from __future__ import annotations

import os
import warnings

import numpy as np

from . import _kernels_py
from ._kernels_py import LinearizeResult, evaluate_block  # noqa: F401  (re-export)
from .problem import BatchProblem

__all__ = ["linearize", "evaluate_block", "active_backend", "use_backend", "LinearizeResult"]

_IMPL = None
_NAME = "python"


def _select():
    global _IMPL, _NAME
    choice = os.environ.get("IMU2SEG_BACKEND", "auto").lower()
    if choice not in ("auto", "python", "compiled"):
        warnings.warn(f"unknown IMU2SEG_BACKEND '{choice}', using auto")
        choice = "auto"
    if choice in ("auto", "compiled"):
        try:
            from . import _fastkern
            _IMPL, _NAME = _fastkern, "compiled"
            return
        except ImportError:
            if choice == "compiled":
                warnings.warn(
                    "compiled backend requested but not built; using python"
                )
    _IMPL, _NAME = _kernels_py, "python"


_select()


def active_backend() -> str:
    """Name of the backend in use: ``"compiled"`` or ``"python"``."""
    return _NAME


def use_backend(name: str) -> str:
    """Force a backend (mainly for tests/benchmarks); returns the old name."""
    global _IMPL, _NAME
    old = _NAME
    if name == "python":
        _IMPL, _NAME = _kernels_py, "python"
    elif name == "compiled":
        from . import _fastkern  # raises ImportError if not built
        _IMPL, _NAME = _fastkern, "compiled"
    else:
        raise ValueError(f"unknown backend '{name}'")
    return old


def linearize(pb: BatchProblem, x: np.ndarray, jac: bool = True) -> LinearizeResult:
    return _IMPL.linearize(pb, x, jac)

"""Compute-backend selection for the hot conv kernels.

Two interchangeable implementations exist: numba-jitted loops and a pure
numpy im2col path. The env var ``FEATREPLAY_BACKEND`` ("numba" or "numpy")
picks one; default is numba when importable, numpy otherwise. Both produce
the same results up to float64 rounding (see tests for the parity bound).
"""

from __future__ import annotations

import os
import warnings

_VALID = ("numba", "numpy")
_backend: str | None = None


def _resolve() -> str:
    env = os.environ.get("FEATREPLAY_BACKEND", "").strip().lower()
    if env:
        if env not in _VALID:
            raise ValueError(f"FEATREPLAY_BACKEND must be one of {_VALID}, got {env!r}")
        if env == "numba" and not _numba_available():
            warnings.warn("FEATREPLAY_BACKEND=numba but numba is not importable; using numpy")
            return "numpy"
        return env
    return "numba" if _numba_available() else "numpy"


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def active_backend() -> str:
    """Return the backend in use ("numba" or "numpy"), resolving it once."""
    global _backend
    if _backend is None:
        _backend = _resolve()
    return _backend


def set_backend(name: str) -> None:
    """Override the backend at runtime (tests and benchmarks)."""
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not _numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    global _backend
    _backend = name

"""Execution backend selection.

The simulation step loop exists twice: a pure-numpy reference path and
numba-jitted kernels for the hot scalar experiments. The env variable
PUSHOPT_BACKEND picks one of {auto, numba, numpy}; "auto" uses numba when
importable and the run is kernel-eligible, falling back to numpy otherwise.
"""

from __future__ import annotations

import os

ENV_VAR = "PUSHOPT_BACKEND"
_CHOICES = ("auto", "numba", "numpy")

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def resolve_backend(override: str | None = None) -> str:
    """Resolve to "numba" or "numpy" from an explicit override or the env flag."""
    choice = override if override is not None else os.environ.get(ENV_VAR, "auto")
    if choice not in _CHOICES:
        raise ValueError(f"unknown backend {choice!r}; expected one of {_CHOICES}")
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return "numba"
    return "numba" if HAS_NUMBA else "numpy"

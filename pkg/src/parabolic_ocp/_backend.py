"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise the NumPy
fallback is used. Set ``PARABOLIC_OCP_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_IMPLS = {"python": _pykernels}
if _ckernels is not None:
    _IMPLS["cython"] = _ckernels

_requested = os.environ.get("PARABOLIC_OCP_BACKEND", "auto").lower()
if _requested == "auto":
    _active = "cython" if "cython" in _IMPLS else "python"
elif _requested in _IMPLS:
    _active = _requested
else:
    raise ImportError(f"unknown or unavailable kernel backend {_requested!r}; "
                      f"available: {sorted(_IMPLS)}")


def available_backends() -> list[str]:
    return sorted(_IMPLS)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} not available; have {sorted(_IMPLS)}")
    _active = name


@contextmanager
def backend(name: str):
    prev = get_backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def pcg_csr(indptr, indices, data, shift, b, x, rtol, maxiter):
    return _IMPLS[_active].pcg_csr(indptr, indices, data, shift, b, x, float(rtol), int(maxiter))


def bin_maxima(bins, inc, dist, nbins):
    return _IMPLS[_active].bin_maxima(
        np.ascontiguousarray(bins, dtype=np.int_),
        np.ascontiguousarray(inc, dtype=float),
        np.ascontiguousarray(dist, dtype=float),
        int(nbins),
    )

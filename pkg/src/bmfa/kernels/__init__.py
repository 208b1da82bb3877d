"""Backend dispatch for the hot convolution kernels.

Two implementations with identical signatures:

* ``numpy`` -- im2col views plus BLAS matmuls (default; fastest where a tuned
  BLAS is available, which is everywhere numpy runs)
* ``numba`` -- direct-summation loops compiled with ``@njit(parallel=True)``

Select with the ``BMFA_BACKEND`` environment variable (``numpy``, ``numba``
or ``auto``) before import, or at runtime with :func:`use_backend`.
``benchmarks/bench_kernels.py`` times both on training-sized workloads.
"""

from __future__ import annotations

import os

from ..errors import ValidationError
from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}
_NUMBA_IMPORT_ERROR = None
try:
    from . import numba_backend

    _BACKENDS["numba"] = numba_backend
except ImportError as exc:  # pragma: no cover - numba is a declared dep
    _NUMBA_IMPORT_ERROR = exc

_active_name: str = "numpy"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> str:
    """Switch the active kernel backend; returns the resolved name."""
    global _active_name
    if name == "auto":
        name = "numpy"
    if name not in _BACKENDS:
        known = ", ".join(sorted(_BACKENDS) + ["auto"])
        hint = f" (numba import failed: {_NUMBA_IMPORT_ERROR})" if name == "numba" else ""
        raise ValidationError(f"unknown kernel backend {name!r}; choose one of {known}{hint}")
    _active_name = name
    return _active_name


def backend_name() -> str:
    return _active_name


def set_num_threads(n: int) -> None:
    """Cap numba's thread pool; the numpy path is governed by BLAS env vars."""
    if n < 1:
        raise ValidationError(f"thread count must be >= 1, got {n}")
    if "numba" in _BACKENDS:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def conv2d_forward(x, w, stride, pad):
    return _BACKENDS[_active_name].conv2d_forward(x, w, stride, pad)


def conv2d_backward(x, w, stride, pad, gy):
    return _BACKENDS[_active_name].conv2d_backward(x, w, stride, pad, gy)


use_backend(os.environ.get("BMFA_BACKEND", "auto"))

"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy
reference implementation is used.  Set ``ODECOFIELD_KERNELS=python`` to
force the fallback.
"""

import logging
import os

import numpy as np

from . import _kernels_py

logger = logging.getLogger(__name__)

_compiled = None
if os.environ.get("ODECOFIELD_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        logger.info("compiled kernels unavailable, using NumPy fallback")

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def available_backends():
    return ("cython", "python") if _compiled is not None else ("python",)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def realize(A, theta, lam, B, Qx, Qy, backend=None):
    k = get_backend(backend)
    return k.realize(_c(A), _c(theta), _c(lam), _c(B), _c(Qx), _c(Qy))


def realize_vjp(A, theta, lam, B, Qx, Qy, G, backend=None):
    k = get_backend(backend)
    return k.realize_vjp(_c(A), _c(theta), _c(lam), _c(B), _c(Qx), _c(Qy), _c(G))


def dirichlet(edges, w, F, backend=None):
    k = get_backend(backend)
    return k.dirichlet(_c(edges, np.int64), _c(w), _c(F))

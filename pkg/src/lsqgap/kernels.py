"""Backend selection for the hot kernels.

The compiled ``_native`` extension is used when it imports; otherwise the
numpy versions in ``_pure`` take over.  Setting ``LSQGAP_PURE_PYTHON=1``
forces the fallback.
"""
import os

import numpy as np

from . import _pure

try:
    if os.environ.get("LSQGAP_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _native
except ImportError:
    _native = None

BACKEND = "native" if _native is not None else "python"


def available_backends():
    return ["native", "python"] if _native is not None else ["python"]


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the selected backend)."""
    name = name or BACKEND
    if name == "native":
        if _native is None:
            raise ImportError("compiled kernels are not built")
        return _native
    if name == "python":
        return _pure
    raise ValueError(f"unknown backend {name!r}")


def floyd_supports(uniforms, d, backend=None):
    u = np.ascontiguousarray(uniforms, dtype=float)
    if u.ndim != 2:
        raise ValueError("uniforms must be a 2-d array")
    return get_backend(backend).floyd_supports(u, int(d))


def support_cooccurrence(supports, d, backend=None):
    s = np.ascontiguousarray(supports, dtype=np.int64)
    if s.ndim != 2:
        raise ValueError("supports must be a 2-d array")
    return get_backend(backend).support_cooccurrence(s, int(d))


def vaw_online_predictions(X, y, lam, backend=None):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    return get_backend(backend).vaw_online_predictions(X, y, float(lam))


def vaw_prefix_average(X, y, lam, Q, backend=None):
    """Prefix-averaged VAW forecasts at the rows of ``Q``.

    Without an explicit ``backend`` the compiled kernel only takes sparse
    query blocks; dense blocks go to the BLAS-backed numpy loop, which is
    faster there.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    Q = np.ascontiguousarray(np.atleast_2d(Q), dtype=float)
    if backend is None and _native is not None and np.count_nonzero(Q) > 0.5 * Q.size:
        backend = "python"
    return get_backend(backend).vaw_prefix_average(X, y, float(lam), Q)

"""Aggregation kernels with a compiled fast path.

The compiled module ``_ckernels`` is used when it was built; otherwise the
numpy versions in ``_fallback`` are used. ``BYZSIM_BACKEND`` (``auto``,
``compiled`` or ``python``) overrides the choice at import time, and
:func:`set_backend` switches it at runtime (tests run both).
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _fallback}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_impl = _fallback
BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select ``"compiled"``, ``"python"`` or ``"auto"``; returns the name in effect."""
    global _impl, BACKEND
    if name == "auto":
        name = "compiled" if "compiled" in _BACKENDS else "python"
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} is not available (have {available_backends()})")
    _impl = _BACKENDS[name]
    BACKEND = name
    return name


set_backend(os.environ.get("BYZSIM_BACKEND", "auto"))


def _matrix(X):
    return np.ascontiguousarray(X, dtype=np.float64)


def column_mean(X):
    return _impl.column_mean(_matrix(X))


# Order statistics always use numpy: its vectorized sort along axis 0 beats
# a per-column compiled sort by 4-10x (see benchmarks/bench_kernels.py).
def coordinate_median(X):
    return _fallback.coordinate_median(_matrix(X))


def trimmed_mean(X, b):
    return _fallback.trimmed_mean(_matrix(X), int(b))


def pairwise_sq_dists(X):
    return _impl.pairwise_sq_dists(_matrix(X))


def krum_scores(X, m):
    return _impl.krum_scores(_matrix(X), int(m))


def weiszfeld(X, iters, smoothing):
    return _impl.weiszfeld(_matrix(X), int(iters), float(smoothing))


def centered_clip(X, v0, tau, iters):
    v0 = np.ascontiguousarray(v0, dtype=np.float64)
    return _impl.centered_clip(_matrix(X), v0, float(tau), int(iters))

"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np

from .constellation import LabeledConstellation


def check_1d(x, name="x", finite=True):
    """Return ``x`` as a 1D float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {a.shape}")
    if finite and not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_received(y, N, name="y"):
    """Return received vectors as an ``(n, N)`` float array."""
    a = np.asarray(y, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[1] != N:
        raise ValueError(f"{name} must have shape (n, {N}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_constellation(c, N=None, name="constellation"):
    if not isinstance(c, LabeledConstellation):
        raise TypeError(f"{name} must be a LabeledConstellation, got {type(c).__name__}")
    if N is not None and c.N != N:
        raise ValueError(f"{name} must have N={N}, got N={c.N}")
    return c


def check_constellations(cs, N=None):
    cs = list(cs)
    for c in cs:
        check_constellation(c, N)
    return cs


def check_positive(v, name):
    v = float(v)
    if not (np.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be positive and finite, got {v!r}")
    return v

"""Backend selection for the numeric kernels.

Kernels are compiled with numba when it is importable, unless the
environment variable ``POWERPROXY_NO_NUMBA`` is set to a truthy value, in
which case the pure-numpy implementations are used.  The flag is read once
at import time; :func:`set_backend` switches it at runtime (mainly for tests
and the benchmark).
"""
import os
import warnings

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba
    import numba.extending
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_use_numba = HAVE_NUMBA and os.environ.get("POWERPROXY_NO_NUMBA", "").strip().lower() in _FALSY


def njit(fn):
    """Compile ``fn`` in nopython mode, or hand it back untouched without numba."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def jitable(fn):
    """Mark a scalar helper callable from compiled kernels; stays plain Python otherwise."""
    if not HAVE_NUMBA:
        return fn
    return numba.extending.register_jitable(fn)


def use_numba():
    return _use_numba


def backend():
    return "numba" if _use_numba else "numpy"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global _use_numba
    prev = backend()
    if name == "numba":
        if not HAVE_NUMBA:
            warnings.warn("numba is not installed; staying on the numpy backend")
            return prev
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev

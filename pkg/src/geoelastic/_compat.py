"""Optional numba acceleration.

The graph builder is a tight numeric loop that benefits enormously from JIT
compilation, but nothing in it requires numba semantically.  When numba is
missing the same code runs as plain Python, just slower.
"""

from __future__ import annotations

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


__all__ = ["njit", "HAVE_NUMBA"]

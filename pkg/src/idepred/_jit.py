"""JIT switch.

Hot kernels are decorated with :func:`maybe_njit`.  Setting the environment
variable ``IDEPRED_DISABLE_JIT=1`` (before import) runs the very same source
as plain numpy/Python, which is handy for debugging and for benchmarking the
two paths against each other.
"""
import logging
import os

JIT_ENABLED = os.environ.get("IDEPRED_DISABLE_JIT", "0").lower() not in ("1", "true", "yes")

if JIT_ENABLED:
    try:
        import numba

        logging.getLogger("numba").setLevel(logging.WARNING)
    except ImportError:  # pragma: no cover
        JIT_ENABLED = False


def maybe_njit(func=None, **kwargs):
    """``numba.njit`` when enabled, identity otherwise. Usable with or without arguments."""

    def wrap(f):
        if JIT_ENABLED:
            return numba.njit(**kwargs)(f)
        return f

    if func is None:
        return wrap
    return wrap(func)

"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback takes over. Set ``RAINCAST_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os
from contextlib import contextmanager

from . import _fallback

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCE_PURE = os.environ.get("RAINCAST_PURE_PYTHON", "") not in ("", "0")

kernels = _fallback if (_compiled is None or _FORCE_PURE) else _compiled


def name():
    return "compiled" if kernels is _compiled else "python"


def available():
    """Names of the backends importable in this environment."""
    return ["python"] + (["compiled"] if _compiled is not None else [])


def set_backend(which):
    global kernels
    if which == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        kernels = _compiled
    elif which == "python":
        kernels = _fallback
    else:
        raise ValueError(f"unknown backend {which!r}")
    logger.debug("kernel backend set to %s", which)


@contextmanager
def use_backend(which):
    previous = name()
    set_backend(which)
    try:
        yield
    finally:
        set_backend(previous)

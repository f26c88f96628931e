"""Hot kernels with a compiled path and a pure-numpy fallback.

``HML_BACKEND=numpy`` selects the fallback; the default is ``numba`` when it
imports cleanly. Both backends expose the same functions.
"""

import os
import warnings

from . import _numpy

BACKEND = os.environ.get("HML_BACKEND", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"HML_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")

_compiled = None
if BACKEND == "numba":
    try:
        with warnings.catch_warnings():
            # the TBB probe warns on older system TBB; the workqueue layer is fine
            warnings.simplefilter("ignore")
            from numba import config as _nbconfig

            _nbconfig.THREADING_LAYER = os.environ.get("NUMBA_THREADING_LAYER", "workqueue")
            from . import _numba as _compiled
    except ImportError:  # pragma: no cover - numba missing
        BACKEND = "numpy"

KIND_IFS = _numpy.KIND_IFS
KIND_CIRCLE = _numpy.KIND_CIRCLE
START_POLE = _numpy.START_POLE
START_SPHERE = _numpy.START_SPHERE
STACK_LEVELS = _numpy.STACK_LEVELS


def backend_module(name=None):
    name = name or BACKEND
    if name == "numba":
        if _compiled is None:
            raise RuntimeError("numba backend unavailable")
        return _compiled
    return _numpy


def set_threads(n):
    if _compiled is not None:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def distance_batch(*args, backend=None):
    return backend_module(backend).distance_batch(*args)


def walk(*args, backend=None):
    return backend_module(backend).walk(*args)


def hole_lines(*args, backend=None):
    return backend_module(backend).hole_lines(*args)

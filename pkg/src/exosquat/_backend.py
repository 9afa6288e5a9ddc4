"""Kernel backend selection.

The compiled extension ``exosquat._core`` is used when it imports; otherwise
the numpy twin in :mod:`exosquat._core_py`. Set ``EXOSQUAT_BACKEND=python``
to force the fallback.
"""

import os

import numpy as np

from exosquat import _core_py

try:
    from exosquat import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

_KEYS = (
    "parent", "jtype", "joff", "jaxis", "mass", "com", "inertia",
    "armature", "damping", "stiffness", "q_rest", "q_lo", "q_hi", "limit_k", "limit_d",
    "sensor_body", "sensor_pos",
    "spring_a", "spring_b", "spring_pa", "spring_pb", "spring_k", "spring_c", "spring_l0",
    "act_body",
)
_INT_KEYS = {"parent", "jtype", "sensor_body", "spring_a", "spring_b", "act_body"}


def available():
    """Names of the backends that can be used in this interpreter."""
    return ["compiled", "python"] if _compiled is not None else ["python"]


def default_backend():
    forced = os.environ.get("EXOSQUAT_BACKEND", "").strip().lower()
    if forced == "python" or _compiled is None:
        return "python"
    return "compiled"


def make_kernel_model(arrays, backend=None):
    backend = backend or default_backend()
    args = []
    for key in _KEYS:
        val = arrays[key]
        if key in ("limit_k", "limit_d"):
            args.append(float(val))
        elif key in _INT_KEYS:
            args.append(np.ascontiguousarray(np.asarray(val, dtype=np.int64).reshape(-1)))
        else:
            args.append(np.ascontiguousarray(np.asarray(val, dtype=np.float64)))
    if backend == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel extension is not built")
        return _compiled.KernelModel(*args)
    if backend != "python":
        raise ValueError(f"unknown backend {backend!r}")
    return _core_py.KernelModel(*args)

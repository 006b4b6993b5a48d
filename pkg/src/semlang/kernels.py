"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the pure-Python
module takes over. Set ``SEMLANG_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels


def _load() -> ModuleType:
    if os.environ.get("SEMLANG_PURE_PYTHON") == "1":
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels
    return _ckernels


_impl = _load()

BACKEND: str = _impl.BACKEND
reach_matrix = _impl.reach_matrix
rollout_tabular = _impl.rollout_tabular
flow_matching_tabular = _impl.flow_matching_tabular
prefix_decode = _impl.prefix_decode


def backends() -> dict[str, ModuleType]:
    """All importable kernel backends keyed by name (for parity tests and benchmarks)."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        return found
    found["cython"] = _ckernels
    return found

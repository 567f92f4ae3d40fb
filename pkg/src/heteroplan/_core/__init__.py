"""Kernel backend selection.

Imports the compiled extension when present, otherwise the pure Python twin.
Set HETEROPLAN_PURE_PYTHON=1 to force the fallback (used by the benchmark and
the parity tests).  Both expose the same API: solve_layer_split, split_cost,
split_lower_bound.
"""
from __future__ import annotations

import os

if os.environ.get("HETEROPLAN_PURE_PYTHON", "") == "1":
    from . import kernel_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import kernel_py as _impl

BACKEND: str = _impl.BACKEND
solve_layer_split = _impl.solve_layer_split
split_cost = _impl.split_cost
split_lower_bound = _impl.split_lower_bound

__all__ = ["BACKEND", "solve_layer_split", "split_cost", "split_lower_bound"]

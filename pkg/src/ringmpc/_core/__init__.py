"""Kernel backend selection.

The compiled Cython kernel is preferred when available; the pure-numpy twin
is the fallback.  Set ``RINGMPC_PURE_PYTHON=1`` to force the fallback (used
by the parity tests and the benchmark).
"""

import os

from .active_set_py import INFEASIBLE, MAX_ITER, OPTIMAL
from .active_set_py import solve_qp_core as _solve_py

if os.environ.get("RINGMPC_PURE_PYTHON"):
    BACKEND = "python"
    solve_qp_core = _solve_py
else:
    try:
        from .active_set_cy import solve_qp_core as _solve_cy

        BACKEND = "cython"
        solve_qp_core = _solve_cy
    except ImportError:
        BACKEND = "python"
        solve_qp_core = _solve_py

__all__ = ["solve_qp_core", "BACKEND", "OPTIMAL", "INFEASIBLE", "MAX_ITER"]

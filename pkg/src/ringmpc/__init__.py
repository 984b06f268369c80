"""Distributed model-predictive consensus.

Constrained linear agents negotiate a common output value over a token
ring using a cyclic incremental subgradient method, then drive themselves
to it with receding-horizon control.  Centralized and brute-force oracles
are included for verification.
"""

from ._core import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]

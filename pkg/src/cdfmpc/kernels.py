"""Backend selection for the shooting kernels.

The compiled extension is used when it was built and ``CDFMPC_PURE_PYTHON``
is unset; otherwise the pure-Python module is loaded.
"""

import os

if os.environ.get("CDFMPC_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        from . import _kernels_py as _impl

from . import _kernels_py as python_backend

BACKEND = _impl.BACKEND
rollout = _impl.rollout
linearize = _impl.linearize
sensitivities = _impl.sensitivities
adjoint_gradient = _impl.adjoint_gradient
weighted_quadratic_sum = _impl.weighted_quadratic_sum

__all__ = [
    "BACKEND", "rollout", "linearize", "sensitivities", "adjoint_gradient",
    "weighted_quadratic_sum", "python_backend",
]

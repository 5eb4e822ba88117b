"""Backend selection for the hot kernels.

``MOTIONGATE_BACKEND=numpy`` forces the vectorised numpy path; the default
``numba`` uses the compiled loops and silently falls back to numpy when
numba cannot be imported. The choice is made once, at import.
"""
import os

_requested = os.environ.get("MOTIONGATE_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"MOTIONGATE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        from . import _numpy as _impl
else:
    from . import _numpy as _impl

BACKEND = _impl.__name__.rsplit("._", 1)[-1]

matmul = _impl.matmul
softmax_rows = _impl.softmax_rows
attend = _impl.attend
self_bias = _impl.self_bias
jacobi_eigh = _impl.jacobi_eigh
pair_auc = _impl.pair_auc

__all__ = ["BACKEND", "matmul", "softmax_rows", "attend", "self_bias", "jacobi_eigh", "pair_auc"]

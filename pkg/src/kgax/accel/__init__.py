"""Backend selection for the hot kernels.

The KGAX_BACKEND environment variable picks the implementation:

* ``auto`` (default): numba if it imports, else the numpy fallback
* ``numba``: require the @njit kernels, fail loudly if unavailable
* ``numpy``: force the pure-numpy fallback

Both backends share signatures and semantics; `benchmarks/bench_kernels.py`
compares their throughput.
"""

import os

_choice = os.environ.get("KGAX_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"KGAX_BACKEND must be one of auto/numba/numpy, got {_choice!r}"
    )

if _choice in ("auto", "numba"):
    try:
        from . import numba_ops as _impl
        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_ops as _impl
        BACKEND = "numpy"
else:
    from . import numpy_ops as _impl
    BACKEND = "numpy"

seg_softmax = _impl.seg_softmax
seg_softmax_grad = _impl.seg_softmax_grad
seg_weighted_sum = _impl.seg_weighted_sum
seg_weighted_sum_grad = _impl.seg_weighted_sum_grad
scatter_add_rows = _impl.scatter_add_rows
adam_update = _impl.adam_update
transr_forward = _impl.transr_forward
transr_backward = _impl.transr_backward

__all__ = [
    "BACKEND",
    "seg_softmax",
    "seg_softmax_grad",
    "seg_weighted_sum",
    "seg_weighted_sum_grad",
    "scatter_add_rows",
    "adam_update",
    "transr_forward",
    "transr_backward",
]

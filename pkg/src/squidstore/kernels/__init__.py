"""Backend selection for the time-stepping kernel.

The compiled extension is preferred when present; set SQUIDSTORE_PURE_PY=1
to force the numpy implementation (useful for benchmarking and debugging).
Both backends implement the identical contract documented in
``squidstore.kernels.pykernel.propagate``.
"""

import os

from . import pykernel

try:
    from . import _propagate as _compiled
except ImportError:
    _compiled = None

if _compiled is not None and not os.environ.get("SQUIDSTORE_PURE_PY"):
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = pykernel


def propagate(terms, coeffs, dts, hbar, x0, conjugate=False, snap_steps=None):
    return _impl.propagate(terms, coeffs, dts, hbar, x0,
                           conjugate=conjugate, snap_steps=snap_steps)


def available_backends():
    out = {"python": pykernel.propagate}
    if _compiled is not None:
        out["compiled"] = _compiled.propagate
    return out

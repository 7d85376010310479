"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
the extension was not built. Set SUBMIX_PURE_PYTHON=1 to force the fallback
(used by the benchmark and by backend-equivalence tests).
"""

import os

if os.environ.get("SUBMIX_PURE_PYTHON"):
    from submix._kernels import _pyfallback as _impl

    BACKEND = "python"
else:
    try:
        from submix._kernels import _speedups as _impl

        BACKEND = "c"
    except ImportError:
        from submix._kernels import _pyfallback as _impl

        BACKEND = "python"

renyi_divergence = _impl.renyi_divergence
max_divergence = _impl.max_divergence
sym_renyi_divergence = _impl.sym_renyi_divergence
mixture_divergence = _impl.mixture_divergence
solve_mixing_weight = _impl.solve_mixing_weight

__all__ = [
    "BACKEND",
    "renyi_divergence",
    "max_divergence",
    "sym_renyi_divergence",
    "mixture_divergence",
    "solve_mixing_weight",
]

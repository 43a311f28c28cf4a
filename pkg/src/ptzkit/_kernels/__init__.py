"""Hot-path kernels: compiled core with a pure-Python fallback.

The batch codec round trip and the regression-tree split search dominate the
toolkit's runtime.  Both are implemented twice with identical semantics: a
Cython extension (``ptzkit._kernels._core``) and a numpy/pure-Python module
(``ptzkit._kernels._pykernels``).  The compiled core is preferred when it was
built; set ``PTZKIT_PURE_PYTHON=1`` to force the fallback.

Both backends hard-code the default 15-token vocabulary layout (ids relative
to base 0): PAN=0, TILT=1, ZOOM=2, ``+``=3, ``-``=4, magnitudes 1..500 at
5..13 in increasing value order, END=14.  ``ptzkit.codec`` is the general,
vocabulary-driven reference implementation; the test suite cross-checks the
kernels against it.
"""

import os

_FORCE_PY = os.environ.get("PTZKIT_PURE_PYTHON", "") not in ("", "0")

if _FORCE_PY:
    from ptzkit._kernels import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from ptzkit._kernels import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from ptzkit._kernels import _pykernels as _impl

        BACKEND = "python"

greedy_magnitude_counts = _impl.greedy_magnitude_counts
encode_actions = _impl.encode_actions
roundtrip_failures = _impl.roundtrip_failures
roundtrip_exhaustive = _impl.roundtrip_exhaustive
best_split = _impl.best_split

__all__ = [
    "BACKEND",
    "greedy_magnitude_counts",
    "encode_actions",
    "roundtrip_failures",
    "roundtrip_exhaustive",
    "best_split",
]

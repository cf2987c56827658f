"""Kernel backend selection.

The compiled Cython module is preferred when importable; otherwise the
pure-numpy fallback is used. Set KINEFISHER_BACKEND=numpy or =compiled to
force one (forcing "compiled" raises if the extension is missing).

Both backends implement the same functions with bit-deterministic results
per backend; across backends the summation order differs, so values agree
only to rounding (~1e-14 relative).
"""

import os as _os

_requested = _os.environ.get("KINEFISHER_BACKEND", "auto")

if _requested not in ("auto", "compiled", "numpy"):
    raise ImportError(f"KINEFISHER_BACKEND must be auto, compiled, or numpy; got {_requested!r}")

if _requested == "numpy":
    from . import numpy_backend as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise
        from . import numpy_backend as _impl

BACKEND = _impl.NAME
bingham_logsum = _impl.bingham_logsum
bingham_moments = _impl.bingham_moments
envelope_max_log_ratio = _impl.envelope_max_log_ratio

__all__ = ["BACKEND", "bingham_logsum", "bingham_moments", "envelope_max_log_ratio"]

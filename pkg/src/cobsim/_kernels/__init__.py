"""Kernel backend selection.

The compiled extension is preferred; the numpy implementation is the
drop-in fallback.  Set COBSIM_PURE_PYTHON=1 to force the fallback (used by
the equivalence tests and the backend benchmark).  Both backends are
bit-identical, so results never depend on which one loaded.
"""

from __future__ import annotations

import os

if os.environ.get("COBSIM_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pykernels as _impl

BACKEND = _impl.BACKEND
delivery_times = _impl.delivery_times
tally_votes = _impl.tally_votes


def load_backend(name: str):
    """Explicit backend module lookup, for side-by-side comparison."""
    if name == "python":
        from . import _pykernels

        return _pykernels
    if name == "cython":
        from . import _speedups  # type: ignore[attr-defined]

        return _speedups
    raise ValueError(f"unknown kernel backend {name!r}")

"""Selects the compiled emit loop when available, else the pure-Python one.

Set AUDIT_ARENA_PURE=1 to force the fallback.
"""

import os

from ._pykernel import REASON_BUDGET, REASON_FULL, REASON_MAX  # noqa: F401
from ._pykernel import emit_slice as py_emit_slice

c_emit_slice = None
if not os.environ.get("AUDIT_ARENA_PURE"):
    try:
        from ._ckernel import emit_slice as c_emit_slice
    except ImportError:  # extension not built
        c_emit_slice = None

COMPILED = c_emit_slice is not None
emit_slice = c_emit_slice if COMPILED else py_emit_slice

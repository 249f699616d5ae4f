"""Kernel dispatch: compiled extension when available, NumPy otherwise.

Set ``CVRSPLINE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("CVRSPLINE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback
else:
    _impl = _fallback

sparse_rank_mod = _impl.sparse_rank_mod
eval_patches = _impl.eval_patches

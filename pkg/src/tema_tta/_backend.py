"""Select the kernel implementation at import.

The compiled ``_kernels`` extension is preferred.  Set ``TEMA_TTA_BACKEND``
to ``python`` to force the numpy fallback (``cython`` makes a missing
extension an import error).
"""

from __future__ import annotations

import os

from . import _purepy

_requested = os.environ.get("TEMA_TTA_BACKEND", "auto").lower()

if _requested not in ("auto", "python", "cython"):
    raise ImportError(f"TEMA_TTA_BACKEND must be auto, python or cython, got {_requested!r}")

if _requested == "python":
    kernels = _purepy
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _purepy
        BACKEND = "python"

batch_moments = kernels.batch_moments
normalize = kernels.normalize
mix_moments = kernels.mix_moments
ema_update = kernels.ema_update
sym_kl = kernels.sym_kl
composition_nonempty = kernels.composition_nonempty

__all__ = [
    "BACKEND",
    "batch_moments",
    "normalize",
    "mix_moments",
    "ema_update",
    "sym_kl",
    "composition_nonempty",
]

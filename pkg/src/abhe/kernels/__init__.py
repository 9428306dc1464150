"""Hot-kernel backend selection.

The compiled extension (``_native``, built from Cython at install time)
is used when importable; otherwise the numpy fallback takes over. Set
``ABHE_BACKEND=numpy`` or ``ABHE_BACKEND=native`` to force a choice
(``native`` raises if the extension is missing). Both backends return
bit-identical results; ``benchmarks/bench_kernels.py`` compares speed.
"""

from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("ABHE_BACKEND", "auto").lower()
_native_mod = None
if _requested in ("auto", "native"):
    try:
        from . import _native as _native_mod
    except ImportError:
        if _requested == "native":
            raise ImportError(
                "ABHE_BACKEND=native but the compiled extension is not built; "
                "run `pip install -e . --no-build-isolation`"
            )
        _native_mod = None
elif _requested != "numpy":
    raise ValueError(f"unknown ABHE_BACKEND={_requested!r} (use auto/native/numpy)")

BACKEND = "native" if _native_mod is not None else "numpy"
_impl = _native_mod if _native_mod is not None else numpy_backend

im2col = _impl.im2col
col2im = _impl.col2im
bilinear_gather = _impl.bilinear_gather
bilinear_backward = _impl.bilinear_backward

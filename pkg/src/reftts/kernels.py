"""Numeric kernel backend selection.

The compiled extension (_ckernels, Cython) is preferred when it was built;
otherwise the numpy fallback (_pykernels) is used. Set REFTTS_KERNELS to
"cython" or "numpy" to force a backend; forcing "cython" raises if the
extension is missing.
"""

import os

_forced = os.environ.get("REFTTS_KERNELS", "").strip().lower()

if _forced in ("numpy", "python", "py"):
    from . import _pykernels as _impl

    BACKEND = "numpy"
elif _forced in ("", "cython", "c"):
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _forced:
            raise
        from . import _pykernels as _impl

        BACKEND = "numpy"
else:
    raise ValueError(f"unknown REFTTS_KERNELS value: {_forced!r}")

fft_radix2 = _impl.fft_radix2
conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
scatter_add_rows = _impl.scatter_add_rows
adam_update = _impl.adam_update

"""Hot aggregation kernels: compiled core with a pure-numpy fallback.

The message passing forward/backward spends most of its time scattering
per-edge rows into per-node accumulators. The compiled extension does this
in one pass; the fallback uses per-column ``np.bincount``, which accumulates
in the same edge order, so both backends produce bit-identical sums.

Set ``KGREC_KERNELS=numpy`` or ``KGREC_KERNELS=cython`` to force a backend.
"""

import os

from . import _numpy

_forced = os.environ.get("KGREC_KERNELS", "").strip().lower()

if _forced == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _ops as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "KGREC_KERNELS=cython but the compiled extension is not built; "
                "reinstall with `pip install -e . --no-build-isolation`"
            ) from None
        _impl = _numpy
        BACKEND = "numpy"

scatter_add_rows = _impl.scatter_add_rows


def get_impl(name):
    """Return a backend module by name ("numpy" or "cython"), for benchmarks."""
    if name == "numpy":
        return _numpy
    if name == "cython":
        from . import _ops

        return _ops
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    out = ["numpy"]
    try:
        from . import _ops  # noqa: F401

        out.append("cython")
    except ImportError:
        pass
    return out

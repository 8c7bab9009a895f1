"""Kernel backend selection.

The compiled extension and the numpy fallback perform the same operations in
the same order, so switching backends never changes results, only speed.
Set RISKDRIFT_PURE=1 to force the fallback.
"""

import os

if os.environ.get("RISKDRIFT_PURE", "") == "1":
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels

BACKEND = "compiled" if kernels.IS_COMPILED else "pure"

lattice_layer = kernels.lattice_layer
lattice_zprofile = kernels.lattice_zprofile
lattice_sweep = kernels.lattice_sweep
hjb_candidates = kernels.hjb_candidates
hjb_layer = kernels.hjb_layer
hjb_sweep = kernels.hjb_sweep

"""Select the compiled kernel maps when available, else the numpy ones.

Setting ``EWA_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from . import _kernels_py

if os.environ.get("EWA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

erf_map = _impl.erf_map
relu_map = _impl.relu_map
BACKEND = "compiled" if _impl is not _kernels_py else "python"

__all__ = ["erf_map", "relu_map", "BACKEND"]

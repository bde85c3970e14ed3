"""Kernel backend selection.

The compiled extension (``mlk._ckernels``) implements the same functions
as :mod:`mlk._pykernels`; import falls back to the numpy versions when the
extension was not built.  Set ``MLK_PURE_PYTHON=1`` to force the fallback.
"""

import os

from mlk import _pykernels

if os.environ.get("MLK_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from mlk import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND_NAME

NEWTON_CONVERGED = _pykernels.NEWTON_CONVERGED
NEWTON_MAX_ITER = _pykernels.NEWTON_MAX_ITER
NEWTON_DEGENERATE = _pykernels.NEWTON_DEGENERATE

newton_solve = _impl.newton_solve
zigzag_map = _impl.zigzag_map
zigzag_unmap = _impl.zigzag_unmap
varint_encode = _impl.varint_encode
varint_decode = _impl.varint_decode
pack_indices = _impl.pack_indices
unpack_indices = _impl.unpack_indices


def available_backends():
    """Name -> module for every importable backend (used by the benchmark)."""
    backends = {"python": _pykernels}
    try:
        from mlk import _ckernels
        backends["compiled"] = _ckernels
    except ImportError:
        pass
    return backends

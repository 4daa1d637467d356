"""Hot kernels, compiled when available.

The Cython extension ``graphcf._ckernels`` is used if it was built; otherwise
the numpy versions in ``graphcf._pykernels`` are used. Set
``GRAPHCF_PURE_PYTHON=1`` to force the fallback. Both backends produce
bit-identical results.
"""

import os
from contextlib import contextmanager

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("GRAPHCF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def backends():
    """Available backend modules keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


@contextmanager
def use_backend(name):
    """Temporarily route the kernels through backend ``name``."""
    global _impl, BACKEND
    available = backends()
    if name not in available:
        raise ValueError(f"backend {name!r} not available; have {sorted(available)}")
    saved = _impl, BACKEND
    _impl, BACKEND = available[name], name
    try:
        yield
    finally:
        _impl, BACKEND = saved


def scatter_add_rows(table, idx, vals, scale=1.0):
    """``table[idx[r]] += scale * vals[r]`` with accumulation over repeats.

    ``table`` is updated in place. 1-D tables (biases) are handled as
    single-column matrices.
    """
    if table.ndim == 1:
        table = table.reshape(-1, 1)
        vals = np.asarray(vals, dtype=np.float64).reshape(-1, 1)
    _impl.scatter_add_rows(
        table,
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(vals, dtype=np.float64),
        float(scale),
    )


def topk_csr(indptr, ids, scores, k, pad=-1):
    """Top-``k`` ids per CSR row by descending score, ties to the smaller id."""
    return _impl.topk_csr(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(ids, dtype=np.int64),
        np.ascontiguousarray(scores, dtype=np.float64),
        int(k),
        int(pad),
    )

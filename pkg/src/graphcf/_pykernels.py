"""Pure-numpy reference versions of the compiled kernels."""

import numpy as np


def scatter_add_rows(table, idx, vals, scale):
    """Accumulate ``scale * vals[r]`` into ``table[idx[r]]`` for every r, in order.

    Repeated indices accumulate; this is the sparse-gradient update of an
    embedding table.
    """
    if vals.shape != (len(idx), table.shape[1]):
        raise ValueError("vals shape does not match (len(idx), table width)")
    if len(idx) and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    np.add.at(table, idx, scale * vals)


def topk_csr(indptr, ids, scores, k, pad):
    """Per CSR row, the ``k`` ids with the highest scores (ties: smaller id first).

    Rows shorter than ``k`` are right-padded with ``pad``. Output is ordered
    best first.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(indptr) - 1
    out = np.full((n, k), pad, dtype=np.int64)
    for e in range(n):
        lo, hi = indptr[e], indptr[e + 1]
        if hi == lo:
            continue
        order = np.lexsort((ids[lo:hi], -scores[lo:hi]))[:k]
        out[e, : len(order)] = ids[lo:hi][order]
    return out

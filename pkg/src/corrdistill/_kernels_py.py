"""Pure numpy versions of the compiled kernels.

Each loop walks the reduced axis in order, vectorised over the other axes, so
every output entry sees the same sequence of roundings as the C loops.
"""
import numpy as np


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError("inner dimensions differ")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k, :])
    return out


def row_sums(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[0], dtype=np.float64)
    for k in range(x.shape[1]):
        out += x[:, k]
    return out

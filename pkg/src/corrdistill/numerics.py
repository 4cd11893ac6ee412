"""Dense matrix primitives with a fixed reduction order.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The two
reductions that dominate training time (matrix products and row sums) go
through a kernel backend: the compiled Cython module when it is importable,
otherwise a numpy loop that performs the same additions in the same order.
Both backends therefore give bit-identical results.

Set ``CORRDISTILL_BACKEND=python`` to force the fallback at import time, or
call :func:`set_backend` at runtime.
"""
from __future__ import annotations

import os
from typing import Callable

import numpy as np

from . import _kernels_py
from .errors import ConfigError, DegenerateEmbeddingError, NumericError, ShapeError

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

NORM_EPS = 1e-12

_BACKENDS = {"python": _kernels_py}
if _kernels_c is not None:
    _BACKENDS["cython"] = _kernels_c


def current_backend() -> str:
    return BACKEND


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    """Select the kernel backend (``"cython"``, ``"python"`` or ``"auto"``)."""
    global _kernels, BACKEND
    if name == "auto":
        name = "cython" if "cython" in _BACKENDS else "python"
    if name not in _BACKENDS:
        raise ConfigError(f"kernel backend {name!r} unavailable; have {available_backends()}")
    _kernels = _BACKENDS[name]
    BACKEND = name


_kernels = _kernels_py
BACKEND = "python"
set_backend(os.environ.get("CORRDISTILL_BACKEND", "auto"))


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product summing left to right over the inner dimension."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _kernels.matmul(a, b)


def row_sums(x) -> np.ndarray:
    return _kernels.row_sums(as_matrix(x))


def col_sums(x) -> np.ndarray:
    return _kernels.row_sums(as_matrix(x).T)


def row_norms(m) -> np.ndarray:
    m = as_matrix(m)
    return np.sqrt(row_sums(m * m))


def row_l2_normalize(m) -> np.ndarray:
    m = as_matrix(m)
    norms = row_norms(m)
    bad = np.flatnonzero(~(norms >= NORM_EPS))
    if bad.size:
        raise DegenerateEmbeddingError(
            f"row {int(bad[0])} has norm {norms[bad[0]]:.3g} < {NORM_EPS:g}"
        )
    return m / norms[:, None]


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")


def log_softmax_rows(m, tau: float) -> np.ndarray:
    """Row-wise ``log softmax(m / tau)`` via max-subtracted log-sum-exp."""
    _check_tau(tau)
    z = as_matrix(m) / tau
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(row_sums(np.exp(shifted)))[:, None]


def log_softmax_columns(m, tau: float) -> np.ndarray:
    return log_softmax_rows(as_matrix(m).T, tau).T


def stable_softmax_rows(m, tau: float) -> np.ndarray:
    """Softmax over each row of ``m / tau``; every row sums to one."""
    _check_tau(tau)
    z = as_matrix(m) / tau
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / row_sums(e)[:, None]


def stable_softmax_columns(m, tau: float) -> np.ndarray:
    """Softmax over each column of ``m / tau``; every column sums to one."""
    return stable_softmax_rows(as_matrix(m).T, tau).T


def grad_check(
    f: Callable[[np.ndarray], float],
    params,
    analytic,
    epsilon: float = 1e-5,
) -> float:
    """Compare an analytic gradient with central finite differences.

    Returns ``max_k |analytic_k - fd_k| / max(1, |analytic_k|)``.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ConfigError(f"epsilon must lie in [1e-7, 1e-4], got {epsilon}")
    x = np.array(params, dtype=np.float64).ravel()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.shape != x.shape:
        raise ShapeError(f"gradient has {analytic.size} entries, params have {x.size}")
    worst = 0.0
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + epsilon
        up = float(f(x.copy()))
        x[k] = orig - epsilon
        down = float(f(x.copy()))
        x[k] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"objective not finite when perturbing coordinate {k}")
        fd = (up - down) / (2.0 * epsilon)
        worst = max(worst, abs(analytic[k] - fd) / max(1.0, abs(analytic[k])))
    return worst

"""Numeric backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
numpy fallback in ``_kernels_py`` takes over. Set ``KDE_OOD_FORCE_PYTHON=1``
to force the fallback (used by the backend-parity tests and the benchmark).

All entry points normalize their inputs here so both backends see identical
C-contiguous float64 arrays.
"""

import os

import numpy as np

from . import _kernels_py

METRIC_L1 = _kernels_py.METRIC_L1
METRIC_L2 = _kernels_py.METRIC_L2

if os.environ.get("KDE_OOD_FORCE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND_NAME = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND_NAME = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND_NAME = "python"


def _as_matrix(a) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def cross_distances(x, ref, metric: int) -> np.ndarray:
    """Distances (n, N) from rows of ``x`` to rows of ``ref``."""
    x = _as_matrix(x)
    ref = _as_matrix(ref)
    if x.shape[1] != ref.shape[1]:
        raise ValueError(
            f"channel count mismatch: {x.shape[1]} != {ref.shape[1]}"
        )
    return _impl.cross_distances(x, ref, metric)


def pairwise_distances(ref, metric: int) -> np.ndarray:
    """Symmetric (N, N) distance matrix over rows of ``ref``."""
    return _impl.pairwise_distances(_as_matrix(ref), metric)


def kde_kernel_sums(dists, sigmas, exclude=None) -> np.ndarray:
    """Per-row Gaussian kernel sums; see ``_kernels_py.kde_kernel_sums``."""
    dists = _as_matrix(dists)
    sigmas = np.ascontiguousarray(sigmas, dtype=np.float64)
    if exclude is None:
        exclude = np.full(dists.shape[0], -1, dtype=np.int64)
    else:
        exclude = np.ascontiguousarray(exclude, dtype=np.int64)
    return _impl.kde_kernel_sums(dists, sigmas, exclude)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a checksum of ``data``."""
    return int(_impl.fnv1a64(data))

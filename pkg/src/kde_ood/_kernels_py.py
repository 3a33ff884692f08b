"""Pure-Python (numpy) implementations of the hot kernels.

This module mirrors the compiled ``_kernels`` extension exactly. Arithmetic
order is pinned so results are bit-identical across the two backends wherever
only +, -, *, /, abs and sqrt are involved (distances); kernel sums involve
``exp``, whose last-ulp rounding may differ between libm and numpy's SIMD
implementation, so cross-backend score agreement is ~1e-15 relative rather
than bit-exact.

Conventions shared with the compiled backend:

* distances accumulate over channels in ascending order (no pairwise
  reassociation, no FMA), in float64;
* kernel sums accumulate over reference index ascending;
* metric codes: 0 = L1, 1 = L2.
"""

import numpy as np

_SQRT_2PI = 2.5066282746310002  # sqrt(2*pi), rounded to nearest float64

METRIC_L1 = 0
METRIC_L2 = 1


def cross_distances(x: np.ndarray, ref: np.ndarray, metric: int) -> np.ndarray:
    """Distance of every row of ``x`` (n, C) to every row of ``ref`` (N, C)."""
    n, c = x.shape
    nref = ref.shape[0]
    acc = np.zeros((n, nref), dtype=np.float64)
    if metric == METRIC_L1:
        for ch in range(c):
            acc += np.abs(x[:, ch, None] - ref[None, :, ch])
        return acc
    for ch in range(c):
        d = x[:, ch, None] - ref[None, :, ch]
        acc += d * d
    return np.sqrt(acc)


def pairwise_distances(ref: np.ndarray, metric: int) -> np.ndarray:
    """Symmetric (N, N) distance matrix with an exactly-zero diagonal."""
    return cross_distances(ref, ref, metric)


def kde_kernel_sums(dists: np.ndarray, sigmas: np.ndarray, exclude: np.ndarray) -> np.ndarray:
    """Sum of Gaussian kernel terms per row of a (n, N) distance matrix.

    Term j of row i is ``exp(-0.5*(d_ij/sigma_j)^2) / (sigma_j*sqrt(2*pi))``.
    ``exclude[i]`` is a reference index whose term is dropped from row i's
    sum (-1 keeps all terms). The caller divides by N or N-1 as appropriate.
    """
    n, nref = dists.shape
    t = dists / sigmas[None, :]
    k = np.exp(-0.5 * (t * t)) / ((sigmas * _SQRT_2PI))[None, :]
    has_excl = exclude >= 0
    if np.any(has_excl):
        rows = np.nonzero(has_excl)[0]
        # Zeroing the excluded term leaves the running sum bit-identical to
        # skipping it (x + 0.0 == x for the non-negative terms summed here).
        k[rows, exclude[rows]] = 0.0
    out = np.zeros(n, dtype=np.float64)
    for j in range(nref):
        out += k[:, j]
    return out


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h

"""Distance-based Gaussian KDE per layer: fitting and scoring.

A fitted layer model holds N reference vectors with one bandwidth each; the
density estimate at x is the mean over references of a normalized 1-D
Gaussian evaluated at the feature-space distance to that reference. Scores
are kept in linear space (the fusion stage consumes them linearly) and
accumulated in float64 over ascending reference index, so results are
bit-reproducible regardless of batching or worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import backend

SQRT_2PI = math.sqrt(2.0 * math.pi)

# Substituted for a k-th neighbor distance of exactly zero (duplicate
# reference points); keeps every kernel term well-defined.
EPS_SIGMA = 1e-12

# Rows per scoring chunk. Fixed (never derived from worker count) so the
# per-row arithmetic is identical however the batch is split.
_CHUNK_ROWS = 256

_THREADS_ENV = "KDE_OOD_THREADS"


class DistanceMetric(Enum):
    """Feature-space distance; L1 is the default throughout."""

    L1 = "l1"
    L2 = "l2"

    @property
    def code(self) -> int:
        return backend.METRIC_L1 if self is DistanceMetric.L1 else backend.METRIC_L2

    @classmethod
    def parse(cls, name) -> "DistanceMetric":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown distance metric {name!r}; expected l1 or l2") from None


def distance(a, b, metric: DistanceMetric = DistanceMetric.L1) -> float:
    """Distance between two feature vectors.

    Scalar reference implementation: accumulates over channels in ascending
    order in float64, which is the exact semantic the vectorized backends
    reproduce bit-for-bit.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.size != b.size:
        raise ValueError(f"vector length mismatch: {a.shape} vs {b.shape}")
    if a.size < 1:
        raise ValueError("vectors must have at least one channel")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("non-finite input to distance")
    acc = 0.0
    if metric is DistanceMetric.L1:
        for x, y in zip(a.tolist(), b.tolist()):
            acc += abs(x - y)
        return acc
    for x, y in zip(a.tolist(), b.tolist()):
        d = x - y
        acc += d * d
    return math.sqrt(acc)


def gaussian_kernel(d: float, sigma: float) -> float:
    """Normalized 1-D zero-mean Gaussian pdf evaluated at distance ``d``."""
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise ValueError(f"kernel size must be positive and finite, got {sigma}")
    if not (d >= 0.0 and math.isfinite(d)):
        raise ValueError(f"distance must be non-negative and finite, got {d}")
    t = d / sigma
    return math.exp(-0.5 * (t * t)) / (sigma * SQRT_2PI)


@dataclass
class LayerKdeModel:
    """Fitted density model for one layer."""

    layer_id: str
    reference: np.ndarray  # (N, C) float64
    bandwidths: np.ndarray  # (N,) float64, strictly positive
    metric: DistanceMetric
    k_used: int

    def __post_init__(self):
        # always copy: freezing a view would freeze the caller's array
        self.reference = np.array(self.reference, dtype=np.float64, order="C")
        self.bandwidths = np.array(self.bandwidths, dtype=np.float64, order="C")
        if self.reference.ndim != 2 or self.reference.shape[0] < 2:
            raise ValueError("reference must be a matrix with at least 2 rows")
        if self.bandwidths.shape != (self.reference.shape[0],):
            raise ValueError("need exactly one bandwidth per reference row")
        if not np.isfinite(self.reference).all():
            raise ValueError("non-finite reference value")
        if not (np.isfinite(self.bandwidths).all() and (self.bandwidths > 0).all()):
            raise ValueError("bandwidths must be strictly positive and finite")
        self.reference.setflags(write=False)
        self.bandwidths.setflags(write=False)

    @property
    def n_references(self) -> int:
        return self.reference.shape[0]

    @property
    def n_channels(self) -> int:
        return self.reference.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LayerKdeModel):
            return NotImplemented
        return (
            self.layer_id == other.layer_id
            and self.metric is other.metric
            and self.k_used == other.k_used
            and self.reference.shape == other.reference.shape
            and self.reference.tobytes() == other.reference.tobytes()
            and self.bandwidths.tobytes() == other.bandwidths.tobytes()
        )


def kth_neighbor_distances(reference: np.ndarray, k: int, metric: DistanceMetric,
                           pairwise: np.ndarray | None = None) -> np.ndarray:
    """Per-row distance to the k-th nearest other row, floored at EPS_SIGMA.

    ``pairwise`` lets callers that already hold the full distance matrix skip
    recomputing it.
    """
    reference = np.ascontiguousarray(reference, dtype=np.float64)
    n = reference.shape[0]
    if n < 2:
        raise ValueError("need at least 2 reference rows")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    if pairwise is None:
        pairwise = backend.pairwise_distances(reference, metric.code)
    off_diag = pairwise[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    kth = np.partition(off_diag, k - 1, axis=1)[:, k - 1]
    return np.where(kth == 0.0, EPS_SIGMA, kth)


def fit_layer(reference, k: int, metric: DistanceMetric = DistanceMetric.L1,
              layer_id: str = "") -> LayerKdeModel:
    """Fit a layer model: bandwidth i is ref row i's k-th neighbor distance."""
    reference = np.ascontiguousarray(reference, dtype=np.float64)
    bandwidths = kth_neighbor_distances(reference, k, metric)
    return LayerKdeModel(
        layer_id=layer_id,
        reference=reference,
        bandwidths=bandwidths,
        metric=metric,
        k_used=k,
    )


def _validate_batch(model: LayerKdeModel, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_channels:
        raise ValueError(
            f"expected vectors of length {model.n_channels}, got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise ValueError("non-finite input to score")
    return x


def _worker_count(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(_THREADS_ENV, "")
        workers = int(env) if env else 1
    return max(1, workers)


def _score_chunk(model: LayerKdeModel, chunk: np.ndarray,
                 exclude: np.ndarray | None) -> np.ndarray:
    dists = backend.cross_distances(chunk, model.reference, model.metric.code)
    return backend.kde_kernel_sums(dists, model.bandwidths, exclude)


def score_batch(model: LayerKdeModel, x, workers: int | None = None) -> np.ndarray:
    """Density estimates for each row of ``x``.

    Rows are processed in fixed-size chunks, optionally across worker
    threads (capped by the KDE_OOD_THREADS env var when ``workers`` is not
    given); per-row arithmetic never depends on the split, so results are
    bit-identical for any worker count.
    """
    x = _validate_batch(model, x)
    n = x.shape[0]
    sums = np.empty(n, dtype=np.float64)
    chunks = [(start, min(start + _CHUNK_ROWS, n)) for start in range(0, n, _CHUNK_ROWS)]
    workers = _worker_count(workers)
    if workers == 1 or len(chunks) <= 1:
        for start, stop in chunks:
            sums[start:stop] = _score_chunk(model, x[start:stop], None)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                (start, stop, pool.submit(_score_chunk, model, x[start:stop], None))
                for start, stop in chunks
            ]
            for start, stop, fut in futures:
                sums[start:stop] = fut.result()
    return sums / model.n_references


def score(model: LayerKdeModel, x) -> float:
    """Density estimate at a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single vector, got shape {x.shape}")
    return float(score_batch(model, x[None, :])[0])


def loo_scores(model: LayerKdeModel, indices=None) -> np.ndarray:
    """Leave-one-out scores of reference rows.

    Row i's own kernel term is dropped and the mean runs over the remaining
    N-1 references. ``indices`` defaults to all reference rows.
    """
    n = model.n_references
    if n < 3:
        raise ValueError("leave-one-out scoring needs at least 3 references")
    if indices is None:
        indices = np.arange(n, dtype=np.int64)
    else:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1 or (indices < 0).any() or (indices >= n).any():
            raise ValueError(f"reference index out of range [0, {n})")
    sums = np.empty(indices.size, dtype=np.float64)
    for pos in range(0, indices.size, _CHUNK_ROWS):
        idx = indices[pos : pos + _CHUNK_ROWS]
        dists = backend.cross_distances(model.reference[idx], model.reference,
                                        model.metric.code)
        sums[pos : pos + idx.size] = backend.kde_kernel_sums(
            dists, model.bandwidths, idx
        )
    return sums / (n - 1)


def loo_score(model: LayerKdeModel, i: int) -> float:
    """Leave-one-out density estimate at reference row ``i``."""
    if not 0 <= i < model.n_references:
        raise ValueError(f"reference index {i} out of range [0, {model.n_references})")
    return float(loo_scores(model, np.array([i], dtype=np.int64))[0])

"""kNN bandwidth computation and data-driven selection of k.

Each reference point gets its own kernel size: the distance to its k-th
nearest neighbor among the other references. The right k is picked per layer
by maximizing separation between scores of clean in-distribution data and
scores of a perturbed copy (higher is better for clean, lower for perturbed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .kde import EPS_SIGMA, DistanceMetric, kth_neighbor_distances

DEFAULT_K_CANDIDATES = (10, 20, 50, 100, 200, 300, 350, 400, 450, 500)


@dataclass(frozen=True)
class KCandidateSet:
    """Candidate neighbor counts to try during selection."""

    values: tuple = DEFAULT_K_CANDIDATES

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise ValueError("candidate set must not be empty")
        if any(v < 1 for v in vals):
            raise ValueError("k candidates must be >= 1")
        if len(set(vals)) != len(vals):
            raise ValueError("duplicate k candidate")
        if tuple(sorted(vals)) != vals:
            raise ValueError("k candidates must be strictly increasing")
        object.__setattr__(self, "values", vals)

    def pruned(self, n_references: int) -> tuple:
        """Drop candidates that exceed the available neighbor count (N-1)."""
        kept = tuple(v for v in self.values if v <= n_references - 1)
        if not kept:
            raise ValueError(
                f"no usable k candidate: all of {self.values} exceed "
                f"N-1 = {n_references - 1}"
            )
        return kept


@dataclass
class KSelectionReport:
    """Outcome of selecting k for one layer."""

    layer_id: str
    chosen_k: int
    candidates: tuple
    objectives: np.ndarray  # (len(candidates),) float64
    n_references: int
    metric: DistanceMetric
    in_dist_totals: np.ndarray = field(default=None)  # summed clean scores per k
    perturbed_totals: np.ndarray = field(default=None)

    def as_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "chosen_k": self.chosen_k,
            "candidates": list(self.candidates),
            "objectives": {str(k): float(v)
                           for k, v in zip(self.candidates, self.objectives)},
            "in_dist_totals": {str(k): float(v)
                               for k, v in zip(self.candidates, self.in_dist_totals)},
            "perturbed_totals": {str(k): float(v)
                                 for k, v in zip(self.candidates,
                                                 self.perturbed_totals)},
            "n_references": self.n_references,
            "metric": self.metric.value,
        }


def knn_bandwidths(reference, k: int, metric: DistanceMetric = DistanceMetric.L1,
                   pairwise: np.ndarray | None = None) -> np.ndarray:
    """Per-reference kernel sizes: distance to the k-th nearest other row.

    Exact zeros (duplicate rows closer than the k-th neighbor) are replaced
    with EPS_SIGMA so every kernel stays normalizable.
    """
    return kth_neighbor_distances(reference, k, metric, pairwise=pairwise)


def _mean_scores(dists: np.ndarray, sigmas: np.ndarray,
                 ref_indices: np.ndarray | None) -> np.ndarray:
    """Per-row KDE scores given precomputed distances to the reference set.

    Rows flagged in ``ref_indices`` (>= 0) are reference members: their own
    kernel term is dropped and the mean runs over N-1.
    """
    n = sigmas.shape[0]
    sums = backend.kde_kernel_sums(dists, sigmas, ref_indices)
    if ref_indices is None:
        return sums / n
    divisors = np.where(ref_indices >= 0, float(n - 1), float(n))
    return sums / divisors


def select_k(reference, in_dist_eval, perturbed_eval,
             metric: DistanceMetric = DistanceMetric.L1,
             candidates: KCandidateSet | None = None,
             in_dist_ref_indices=None,
             layer_id: str = "") -> KSelectionReport:
    """Pick k maximizing sum(clean scores) - sum(perturbed scores).

    Distances are computed once and reused across candidates; only the
    bandwidth vector changes with k. Ties go to the smallest k.
    ``in_dist_ref_indices`` marks clean eval rows that are also reference
    rows (by reference index, -1 elsewhere) so they are scored leave-one-out
    instead of trivially matching themselves.
    """
    reference = np.ascontiguousarray(reference, dtype=np.float64)
    in_dist_eval = np.ascontiguousarray(in_dist_eval, dtype=np.float64)
    perturbed_eval = np.ascontiguousarray(perturbed_eval, dtype=np.float64)
    n = reference.shape[0]
    candidates = candidates or KCandidateSet()
    kept = candidates.pruned(n)

    if in_dist_ref_indices is not None:
        in_dist_ref_indices = np.asarray(in_dist_ref_indices, dtype=np.int64)
        if in_dist_ref_indices.shape != (in_dist_eval.shape[0],):
            raise ValueError("need one reference index (or -1) per clean eval row")
        if (in_dist_ref_indices >= n).any() or (in_dist_ref_indices < -1).any():
            raise ValueError(f"reference index out of range [0, {n}) (or -1)")

    pairwise = backend.pairwise_distances(reference, metric.code)
    off_diag = np.sort(pairwise[~np.eye(n, dtype=bool)].reshape(n, n - 1), axis=1)
    d_in = backend.cross_distances(in_dist_eval, reference, metric.code)
    d_pert = backend.cross_distances(perturbed_eval, reference, metric.code)

    objectives = np.empty(len(kept), dtype=np.float64)
    in_totals = np.empty(len(kept), dtype=np.float64)
    pert_totals = np.empty(len(kept), dtype=np.float64)
    best_pos = 0
    for pos, k in enumerate(kept):
        kth = off_diag[:, k - 1]
        sigmas = np.where(kth == 0.0, EPS_SIGMA, kth)
        in_totals[pos] = float(np.sum(_mean_scores(d_in, sigmas, in_dist_ref_indices)))
        pert_totals[pos] = float(np.sum(_mean_scores(d_pert, sigmas, None)))
        objectives[pos] = in_totals[pos] - pert_totals[pos]
        # strict > keeps the smallest k on ties
        if objectives[pos] > objectives[best_pos]:
            best_pos = pos

    return KSelectionReport(
        layer_id=layer_id,
        chosen_k=kept[best_pos],
        candidates=kept,
        objectives=objectives,
        n_references=n,
        metric=metric,
        in_dist_totals=in_totals,
        perturbed_totals=pert_totals,
    )

"""Combining per-layer density scores into one confidence value.

A logistic regression is trained from scratch (full-batch gradient descent,
zero init) on standardized layer scores, with in-distribution rows as the
positive class. The fused confidence is the raw logit, not the sigmoid
output: downstream thresholding only needs a monotone score and the logit
keeps resolution in the tails.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# Standardization floor: a score column with (near-)zero spread maps to
# zeros instead of blowing up.
EPS_STD = 1e-12

LABEL_POSITIVE = 1  # in-distribution
LABEL_NEGATIVE = 0  # OOD / perturbed


@dataclass
class ScoreTable:
    """Per-layer scores for a set of samples, one column per layer.

    ``sample_ids`` carry provenance ("dataset:row") so downstream checks can
    tell where every row came from. ``labels`` are optional: 1 marks
    in-distribution rows, 0 the negatives.
    """

    sample_ids: tuple
    layer_ids: tuple
    scores: np.ndarray  # (n, L) float64
    labels: np.ndarray | None = None  # (n,) int64 of {0, 1}

    def __post_init__(self):
        self.sample_ids = tuple(str(s) for s in self.sample_ids)
        self.layer_ids = tuple(str(i) for i in self.layer_ids)
        if not self.layer_ids:
            raise ValueError("score table needs at least one layer")
        if len(set(self.layer_ids)) != len(self.layer_ids):
            raise ValueError("duplicate layer id in score table")
        # always copy: freezing a view would freeze the caller's array
        self.scores = np.array(self.scores, dtype=np.float64, order="C")
        if self.scores.ndim != 2 or self.scores.shape[0] < 1:
            raise ValueError("scores must be a non-empty (samples, layers) matrix")
        if len(self.sample_ids) != self.scores.shape[0]:
            raise ValueError(
                f"{len(self.sample_ids)} sample ids for {self.scores.shape[0]} rows"
            )
        if self.scores.shape[1] != len(self.layer_ids):
            raise ValueError(
                f"score matrix has {self.scores.shape[1]} columns for "
                f"{len(self.layer_ids)} layer ids"
            )
        if not np.isfinite(self.scores).all():
            raise ValueError("non-finite score value")
        self.scores.setflags(write=False)
        if self.labels is not None:
            self.labels = np.array(self.labels, dtype=np.int64, order="C")
            if self.labels.shape != (self.scores.shape[0],):
                raise ValueError("need exactly one label per row")
            if not np.isin(self.labels, (LABEL_NEGATIVE, LABEL_POSITIVE)).all():
                raise ValueError("labels must be 0 (negative) or 1 (positive)")
            self.labels.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_layers(self) -> int:
        return self.scores.shape[1]

    @classmethod
    def labeled(cls, positive: "ScoreTable", negative: "ScoreTable") -> "ScoreTable":
        """Stack a positive and a negative table into one labeled table."""
        if positive.layer_ids != negative.layer_ids:
            raise ValueError(
                f"layer mismatch between score tables: {positive.layer_ids} "
                f"vs {negative.layer_ids}"
            )
        return cls(
            sample_ids=positive.sample_ids + negative.sample_ids,
            layer_ids=positive.layer_ids,
            scores=np.concatenate([positive.scores, negative.scores], axis=0),
            labels=np.concatenate([
                np.full(positive.n_samples, LABEL_POSITIVE, dtype=np.int64),
                np.full(negative.n_samples, LABEL_NEGATIVE, dtype=np.int64),
            ]),
        )


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent settings for the fusion stage.

    The trainer itself is deterministic (zero init, full batch); the seed is
    recorded for provenance only.
    """

    learning_rate: float = 0.1
    max_epochs: int = 2000
    l2_penalty: float = 0.0
    convergence_tol: float = 1e-7  # on the gradient max-norm
    seed: int = 0
    standardize: bool = True  # z-score the raw scores before regression

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.l2_penalty < 0:
            raise ValueError(f"l2_penalty must be >= 0, got {self.l2_penalty}")
        if not self.convergence_tol > 0:
            raise ValueError(
                f"convergence_tol must be positive, got {self.convergence_tol}"
            )
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")


@dataclass
class FusionModel:
    """Trained fusion parameters plus the standardization they assume."""

    alpha: np.ndarray  # (L,) float64
    bias: float
    means: np.ndarray  # (L,) float64, standardizer offsets
    stds: np.ndarray  # (L,) float64, standardizer scales, floored at EPS_STD
    train_config: TrainConfig = field(default_factory=TrainConfig)
    # training diagnostics; informational, not part of the model identity
    epochs_run: int = field(default=0, compare=False)
    final_loss: float = field(default=float("nan"), compare=False)
    converged: bool = field(default=False, compare=False)
    train_accuracy: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=np.float64, order="C")
        self.means = np.array(self.means, dtype=np.float64, order="C")
        self.stds = np.array(self.stds, dtype=np.float64, order="C")
        length = self.alpha.shape[0] if self.alpha.ndim == 1 else -1
        if length < 1:
            raise ValueError("alpha must be a non-empty vector")
        for name, arr in (("alpha", self.alpha), ("means", self.means),
                          ("stds", self.stds)):
            if arr.shape != (length,):
                raise ValueError(f"{name} must have shape ({length},), got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite value in {name}")
        if (self.stds < EPS_STD).any():
            raise ValueError(f"standardizer stds must be >= {EPS_STD}")
        if not np.isfinite(self.bias):
            raise ValueError("non-finite bias")
        self.bias = float(self.bias)
        self.alpha.setflags(write=False)
        self.means.setflags(write=False)
        self.stds.setflags(write=False)

    @property
    def n_layers(self) -> int:
        return self.alpha.shape[0]

    def __eq__(self, other) -> bool:
        # diagnostics are informational, so identity is the parameters alone
        if not isinstance(other, FusionModel):
            return NotImplemented
        return (
            self.bias == other.bias
            and self.train_config == other.train_config
            and self.alpha.tobytes() == other.alpha.tobytes()
            and self.means.tobytes() == other.means.tobytes()
            and self.stds.tobytes() == other.stds.tobytes()
        )


def _linear(x: np.ndarray, alpha: np.ndarray, bias: float) -> np.ndarray:
    # column-by-column accumulation in fixed order; avoids BLAS so the
    # result does not depend on threading or CPU dispatch
    z = np.full(x.shape[0], bias, dtype=np.float64)
    for j in range(alpha.shape[0]):
        z += x[:, j] * alpha[j]
    return z


def loss_and_gradient(alpha, bias: float, x, y, l2_penalty: float = 0.0):
    """Mean binary cross-entropy (softplus form) with optional L2 on alpha.

    Returns (loss, grad_alpha, grad_bias). The bias is never regularized.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    m = x.shape[0]
    if y.shape != (m,):
        raise ValueError(f"need one label per row, got {y.shape} for {m} rows")
    z = _linear(x, alpha, bias)
    # log(1 + exp(z)) - y*z, evaluated stably for large |z|
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    if l2_penalty > 0:
        loss += 0.5 * l2_penalty * float(np.sum(alpha * alpha))
    residual = expit(z) - y
    grad_alpha = np.empty_like(alpha)
    for j in range(alpha.shape[0]):
        grad_alpha[j] = np.sum(x[:, j] * residual) / m
    if l2_penalty > 0:
        grad_alpha += l2_penalty * alpha
    grad_bias = float(np.sum(residual) / m)
    return loss, grad_alpha, grad_bias


def _standardizer(x: np.ndarray, enabled: bool):
    length = x.shape[1]
    if not enabled:
        return np.zeros(length), np.ones(length)
    means = np.mean(x, axis=0)
    stds = np.maximum(np.std(x, axis=0), EPS_STD)
    return means, stds


def train_fusion(train: ScoreTable, config: TrainConfig | None = None) -> FusionModel:
    """Fit the fusion weights on a labeled score table.

    Standardizer statistics come from the training rows; optimization is
    plain full-batch gradient descent from zero init, stopping when the
    gradient max-norm drops below convergence_tol or after max_epochs.
    With fixed inputs the result is reproducible to the bit.
    """
    config = config or TrainConfig()
    if train.labels is None:
        raise ValueError("fusion training needs a labeled score table")
    y = train.labels.astype(np.float64)
    n_pos = int(np.sum(train.labels == LABEL_POSITIVE))
    if n_pos == 0 or n_pos == train.n_samples:
        raise ValueError(
            "fusion training needs at least one positive and one negative row"
        )
    means, stds = _standardizer(train.scores, config.standardize)
    x = (train.scores - means) / stds

    alpha = np.zeros(x.shape[1], dtype=np.float64)
    bias = 0.0
    epochs = 0
    for _ in range(config.max_epochs):
        _, grad_a, grad_b = loss_and_gradient(alpha, bias, x, y, config.l2_penalty)
        if max(float(np.max(np.abs(grad_a))), abs(grad_b)) <= config.convergence_tol:
            break
        alpha = alpha - config.learning_rate * grad_a
        bias = bias - config.learning_rate * grad_b
        epochs += 1

    final_loss, grad_a, grad_b = loss_and_gradient(alpha, bias, x, y, config.l2_penalty)
    converged = (
        max(float(np.max(np.abs(grad_a))), abs(grad_b)) <= config.convergence_tol
    )
    # logit >= 0 predicts in-distribution
    z = _linear(x, alpha, bias)
    accuracy = float(np.mean((z >= 0.0) == (y == 1.0)))
    return FusionModel(
        alpha=alpha,
        bias=bias,
        means=means,
        stds=stds,
        train_config=config,
        epochs_run=epochs,
        final_loss=final_loss,
        converged=converged,
        train_accuracy=accuracy,
    )


def _scores_matrix(model: FusionModel, scores) -> np.ndarray:
    if isinstance(scores, ScoreTable):
        x = scores.scores
    else:
        x = np.ascontiguousarray(scores, dtype=np.float64)
        if not np.isfinite(x).all():
            raise ValueError("non-finite score value")
    if x.ndim != 2 or x.shape[1] != model.n_layers:
        raise ValueError(
            f"expected a (samples, {model.n_layers}) score matrix, "
            f"got shape {x.shape}"
        )
    return x


def confidence_batch(model: FusionModel, scores) -> np.ndarray:
    """Fused confidence (logit) per row; higher means more in-distribution.

    ``scores`` is a ScoreTable or a raw (n, L) matrix with columns in the
    model's layer order.
    """
    x = (_scores_matrix(model, scores) - model.means) / model.stds
    return _linear(x, model.alpha, model.bias)


def confidence(model: FusionModel, layer_scores) -> float:
    """Fused confidence for a single sample's per-layer scores."""
    row = np.asarray(layer_scores, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError(f"expected a single score vector, got shape {row.shape}")
    if row.shape[0] != model.n_layers:
        raise ValueError(
            f"expected {model.n_layers} layer scores, got {row.shape[0]}"
        )
    if not np.isfinite(row).all():
        raise ValueError("non-finite score value")
    return float(confidence_batch(model, row[None, :])[0])

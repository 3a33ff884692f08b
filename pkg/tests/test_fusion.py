"""Logistic-regression score fusion."""

import numpy as np
import pytest

import oracles
from kde_ood.fusion import (
    EPS_STD,
    FusionModel,
    ScoreTable,
    TrainConfig,
    confidence,
    confidence_batch,
    loss_and_gradient,
    train_fusion,
)


def _table(scores, labels=None, layer_ids=None):
    scores = np.asarray(scores, dtype=np.float64)
    n, width = scores.shape
    return ScoreTable(
        sample_ids=tuple(f"s:{i}" for i in range(n)),
        layer_ids=tuple(layer_ids or (f"layer{j}" for j in range(width))),
        scores=scores,
        labels=None if labels is None else np.asarray(labels),
    )


def _random_labeled(rng, n=60, width=3, sep=1.0):
    pos = rng.normal(sep, 1.0, size=(n, width))
    neg = rng.normal(-sep, 1.0, size=(n, width))
    return _table(np.vstack([pos, neg]), labels=[1] * n + [0] * n)


def _identity_model(alpha, bias=0.0):
    width = len(alpha)
    return FusionModel(alpha=np.asarray(alpha, float), bias=bias,
                       means=np.zeros(width), stds=np.ones(width))


class TestScoreTable:
    def test_rejects_label_values_outside_binary(self):
        with pytest.raises(ValueError):
            _table([[1.0], [2.0]], labels=[1, 2])

    def test_rejects_non_finite_scores(self):
        with pytest.raises(ValueError):
            _table([[np.inf], [0.0]])

    def test_rejects_shape_mismatches(self):
        with pytest.raises(ValueError):
            ScoreTable(("a",), ("l1", "l2"), np.zeros((1, 1)))
        with pytest.raises(ValueError):
            ScoreTable(("a", "b"), ("l",), np.zeros((1, 1)))

    def test_labeled_stacks_positive_then_negative(self):
        pos = _table([[1.0], [2.0]])
        neg = _table([[-1.0]])
        both = ScoreTable.labeled(pos, neg)
        assert both.labels.tolist() == [1, 1, 0]
        assert both.scores[:, 0].tolist() == [1.0, 2.0, -1.0]

    def test_arrays_frozen(self):
        table = _table([[1.0], [2.0]], labels=[1, 0])
        assert not table.scores.flags.writeable
        assert not table.labels.flags.writeable


class TestLossAndGradient:
    def test_matches_independent_loss(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(40, 3))
        y = rng.integers(0, 2, size=40).astype(float)
        alpha = rng.normal(size=3)
        loss, _, _ = loss_and_gradient(alpha, 0.3, x, y, l2_penalty=0.1)
        want = oracles.logistic_loss(alpha, 0.3, x, y, l2_penalty=0.1)
        assert loss == pytest.approx(want, rel=1e-12)

    def test_finite_difference_gradient(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(200, 3))
        y = rng.integers(0, 2, size=200).astype(float)
        eps = 1e-6
        for _ in range(20):
            alpha = rng.normal(size=3)
            bias = float(rng.normal())
            _, grad_alpha, grad_bias = loss_and_gradient(alpha, bias, x, y, 0.1)
            for j in range(3):
                step = np.zeros(3)
                step[j] = eps
                up = oracles.logistic_loss(alpha + step, bias, x, y, 0.1)
                down = oracles.logistic_loss(alpha - step, bias, x, y, 0.1)
                assert grad_alpha[j] == pytest.approx((up - down) / (2 * eps), rel=1e-5)
            up = oracles.logistic_loss(alpha, bias + eps, x, y, 0.1)
            down = oracles.logistic_loss(alpha, bias - eps, x, y, 0.1)
            assert grad_bias == pytest.approx((up - down) / (2 * eps), rel=1e-5)

    def test_bias_not_regularized(self):
        x = np.array([[1.0], [-1.0]])
        y = np.array([1.0, 0.0])
        _, _, g_small = loss_and_gradient(np.zeros(1), 5.0, x, y, 0.0)
        _, _, g_large = loss_and_gradient(np.zeros(1), 5.0, x, y, 10.0)
        assert g_small == g_large


class TestTrainFusion:
    def test_separable_single_layer(self):
        table = _table([[1.0]] * 10 + [[-1.0]] * 10, labels=[1] * 10 + [0] * 10)
        model = train_fusion(table)
        assert model.alpha[0] > 0
        assert model.train_accuracy == 1.0

    def test_label_flip_negates_parameters(self):
        rng = np.random.default_rng(2)
        table = _random_labeled(rng)
        flipped = ScoreTable(table.sample_ids, table.layer_ids, table.scores,
                             labels=1 - table.labels)
        a = train_fusion(table)
        b = train_fusion(flipped)
        assert a.alpha == pytest.approx(-b.alpha, abs=1e-6)
        assert a.bias == pytest.approx(-b.bias, abs=1e-6)

    def test_loss_never_increases_at_default_rate(self):
        rng = np.random.default_rng(3)
        table = _random_labeled(rng, n=40, sep=0.3)
        x = (table.scores - table.scores.mean(0)) / table.scores.std(0)
        y = table.labels.astype(float)
        cfg = TrainConfig()
        alpha = np.zeros(3)
        bias = 0.0
        losses = []
        for _ in range(200):
            loss, ga, gb = loss_and_gradient(alpha, bias, x, y, cfg.l2_penalty)
            losses.append(loss)
            alpha -= cfg.learning_rate * ga
            bias -= cfg.learning_rate * gb
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        table = _random_labeled(rng)
        a = train_fusion(table)
        b = train_fusion(table)
        assert (a.alpha == b.alpha).all()
        assert a.bias == b.bias
        assert (a.means == b.means).all() and (a.stds == b.stds).all()
        assert a.epochs_run == b.epochs_run and a.final_loss == b.final_loss

    def test_ranking_invariant_under_affine_column_rescale(self):
        rng = np.random.default_rng(5)
        table = _random_labeled(rng)
        test_rows = rng.normal(size=(30, 3))
        base = train_fusion(table)
        base_rank = np.argsort(confidence_batch(base, test_rows))

        scaled = table.scores.copy()
        scaled[:, 1] = 40.0 * scaled[:, 1] - 3.0
        test_scaled = test_rows.copy()
        test_scaled[:, 1] = 40.0 * test_scaled[:, 1] - 3.0
        refit = train_fusion(ScoreTable(table.sample_ids, table.layer_ids,
                                        scaled, labels=table.labels))
        assert np.array_equal(np.argsort(confidence_batch(refit, test_scaled)),
                              base_rank)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="one positive and one negative"):
            train_fusion(_table([[1.0], [2.0]], labels=[1, 1]))

    def test_unlabeled_rejected(self):
        with pytest.raises(ValueError):
            train_fusion(_table([[1.0], [2.0]]))

    def test_convergence_reported(self):
        table = _table([[3.0]] * 5 + [[-3.0]] * 5, labels=[1] * 5 + [0] * 5)
        model = train_fusion(table, TrainConfig(max_epochs=3))
        assert model.epochs_run == 3
        assert not model.converged

    def test_standardizer_floor_on_constant_column(self):
        scores = np.column_stack([np.ones(8), np.linspace(-1, 1, 8)])
        model = train_fusion(_table(scores, labels=[1, 0] * 4))
        assert model.stds[0] == EPS_STD

    def test_raw_score_mode(self):
        rng = np.random.default_rng(6)
        table = _random_labeled(rng)
        model = train_fusion(table, TrainConfig(standardize=False))
        assert (model.means == 0).all() and (model.stds == 1).all()


class TestConfidence:
    def test_projection_example(self):
        model = _identity_model([1.0, 0.0])
        assert confidence(model, [0.2, 9.9]) == pytest.approx(0.2)

    def test_direct_combination_example(self):
        model = _identity_model([0.5, 0.5])
        assert confidence(model, [0.2, 0.4]) == pytest.approx(0.3)

    def test_zero_standardized_row_returns_bias(self):
        model = FusionModel(alpha=np.array([2.0, -1.0]), bias=0.75,
                            means=np.array([4.0, 5.0]), stds=np.array([2.0, 3.0]))
        assert confidence(model, [4.0, 5.0]) == 0.75

    def test_trained_model_orders_exemplars(self):
        table = _table([[1.0]] * 6 + [[-1.0]] * 6, labels=[1] * 6 + [0] * 6)
        model = train_fusion(table)
        assert confidence(model, [1.0]) > confidence(model, [-1.0])

    def test_batch_is_bit_identical_to_rows(self):
        rng = np.random.default_rng(7)
        model = train_fusion(_random_labeled(rng))
        rows = rng.normal(size=(50, 3))
        batch = confidence_batch(model, rows)
        singles = np.array([confidence(model, row) for row in rows])
        assert (batch == singles).all()

    def test_batch_accepts_score_table(self):
        rng = np.random.default_rng(8)
        model = train_fusion(_random_labeled(rng))
        table = _table(rng.normal(size=(5, 3)))
        assert (confidence_batch(model, table) == confidence_batch(model, table.scores)).all()

    def test_width_mismatch(self):
        model = _identity_model([1.0, 0.0])
        with pytest.raises(ValueError):
            confidence(model, [1.0])

    def test_model_validation(self):
        with pytest.raises(ValueError):
            FusionModel(alpha=np.array([1.0]), bias=0.0,
                        means=np.zeros(1), stds=np.zeros(1))
        with pytest.raises(ValueError):
            FusionModel(alpha=np.array([np.nan]), bias=0.0,
                        means=np.zeros(1), stds=np.ones(1))

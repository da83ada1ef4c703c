"""Least-squares CTR regression and the constant lookup baseline."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rsm import FeatureRow, ShapeError, constant_scorer, fit_least_squares, predict


def rows_from_design(design, targets):
    return [
        FeatureRow(query_id="q", item_id=f"i{j}", features=design[j], ctr=float(targets[j]))
        for j in range(len(targets))
    ]


class TestLeastSquares:
    def test_exact_affine_recovery(self):
        rng = np.random.default_rng(12)
        beta = np.array([0.04, -0.03, 0.02])
        intercept = 0.3
        design = rng.random((30, 3))
        targets = design @ beta + intercept
        model = fit_least_squares(rows_from_design(design, targets))
        assert_allclose(model.coefficients, beta, atol=1e-8)
        assert abs(model.intercept - intercept) < 1e-8
        assert not model.used_ridge
        for j in range(5):
            probe = FeatureRow("q", "p", design[j], 0.0)
            assert abs(predict(model, probe) - targets[j]) < 1e-8

    def test_position_bias_yields_negative_coefficient(self):
        """Clicks driven by display position alone: the position weight is < 0."""
        rng = np.random.default_rng(44)
        rows = []
        for q in range(40):
            for pos in range(1, 6):
                ctr = max(0.0, 0.5 - 0.08 * pos + rng.normal(0.0, 0.01))
                features = np.array([rng.random(), float(pos)])
                rows.append(FeatureRow(f"q{q}", f"i{pos}", features, min(ctr, 1.0)))
        model = fit_least_squares(rows)
        assert model.coefficients[1] < 0.0

    def test_rank_deficient_falls_back_to_ridge(self):
        rng = np.random.default_rng(17)
        col = rng.random(12)
        design = np.column_stack([col, 2.0 * col, rng.random(12)])
        targets = 0.1 * col + 0.2
        model = fit_least_squares(rows_from_design(design, targets))
        assert model.used_ridge
        # predictions still track the targets despite the degenerate design
        preds = [predict(model, FeatureRow("q", "p", design[j], 0.0)) for j in range(12)]
        assert float(np.max(np.abs(np.array(preds) - targets))) < 1e-3

    def test_constant_column_is_harmless(self):
        rng = np.random.default_rng(23)
        design = np.column_stack([rng.random(15), np.full(15, 3.0)])
        targets = 0.2 * design[:, 0] + 0.1
        model = fit_least_squares(rows_from_design(design, targets))
        preds = [predict(model, FeatureRow("q", "p", design[j], 0.0)) for j in range(15)]
        assert float(np.max(np.abs(np.array(preds) - targets))) < 1e-8

    def test_nested_fit_never_fits_worse(self):
        """Adding a column cannot increase the residual sum of squares."""
        rng = np.random.default_rng(99)
        for _ in range(10):
            m = int(rng.integers(10, 25))
            design = rng.random((m, 3))
            targets = rng.random(m)
            small = fit_least_squares(rows_from_design(design[:, :2], targets))
            big = fit_least_squares(rows_from_design(design, targets))
            ssr_small = sum(
                (predict(small, FeatureRow("q", "p", design[j, :2], 0.0)) - targets[j]) ** 2
                for j in range(m)
            )
            ssr_big = sum(
                (predict(big, FeatureRow("q", "p", design[j], 0.0)) - targets[j]) ** 2
                for j in range(m)
            )
            assert ssr_big <= ssr_small + 1e-10

    def test_demands_enough_rows(self):
        rng = np.random.default_rng(1)
        design = rng.random((3, 3))
        with pytest.raises(ValueError):
            fit_least_squares(rows_from_design(design, [0.1, 0.2, 0.3]))

    def test_predict_arity_guard(self):
        rng = np.random.default_rng(2)
        design = rng.random((6, 2))
        model = fit_least_squares(rows_from_design(design, rng.random(6)))
        with pytest.raises(ShapeError):
            predict(model, FeatureRow("q", "p", np.array([1.0, 2.0, 3.0]), 0.0))

    def test_mixed_arity_rejected(self):
        rows = [
            FeatureRow("q", "a", np.array([1.0, 2.0]), 0.1),
            FeatureRow("q", "b", np.array([1.0]), 0.2),
        ]
        with pytest.raises(ShapeError):
            fit_least_squares(rows)


class TestConstantScorer:
    def test_averages_repeated_observations(self):
        rows = [
            FeatureRow("q1", "a", np.array([0.0]), 0.2),
            FeatureRow("q1", "a", np.array([0.0]), 0.4),
            FeatureRow("q1", "b", np.array([0.0]), 0.7),
        ]
        table = constant_scorer(rows)
        assert abs(table.score("q1", "a") - 0.3) < 1e-15
        assert abs(table.score("q1", "b") - 0.7) < 1e-15

    def test_unseen_pairs_score_zero(self):
        table = constant_scorer([FeatureRow("q1", "a", np.array([0.0]), 0.5)])
        assert table.score("q1", "zz") == 0.0
        assert table.score("q9", "a") == 0.0

    def test_same_item_same_score_everywhere(self):
        # the table has no notion of context: one score per (query, item)
        rows = [FeatureRow("q", "a", np.array([float(i)]), 0.25) for i in range(4)]
        table = constant_scorer(rows)
        assert table.score("q", "a") == table.score("q", "a")
        assert abs(table.score("q", "a") - 0.25) < 1e-15

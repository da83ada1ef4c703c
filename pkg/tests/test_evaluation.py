"""Flip accuracy, paired t-tests and the repeated-split experiment runner."""

import json
import math

import numpy as np
import pytest

from rsm import (
    DegenerateVariance,
    FlipPair,
    Model,
    constant_model,
    ctr_mae,
    flip_accuracy,
    paired_t_test,
    run_experiment,
)

from conftest import make_row

FEATS = {"price": [1.0, 2.0], "rating": [4.0, 3.0]}


def build_pairs(count, seed=0):
    """Synthetic flip pairs with slightly varied click patterns."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        a_clicks = int(rng.integers(6, 12))
        b_clicks = int(rng.integers(2, a_clicks - 1))
        r1 = make_row(f"q{i}", "c1", ["a", "b"], [a_clicks, b_clicks], FEATS)
        r2 = make_row(f"q{i}", "c2", ["a", "b"], [b_clicks, a_clicks], FEATS)
        pairs.append(FlipPair(row_1=r1, row_2=r2, item_a="a", item_b="b", strength=0.5))
    return pairs


def ctr_scorer(row, item):
    return float(row.ctrs()[row.index_of(item)])


class TestFlipAccuracy:
    def test_true_ctr_scorer_is_perfect(self):
        assert flip_accuracy(ctr_scorer, build_pairs(20)) == 1.0

    def test_constant_scorer_is_exactly_half(self):
        scorer = constant_model().fit([])
        assert flip_accuracy(scorer, build_pairs(17)) == 0.5

    def test_inverted_scorer_is_zero(self):
        inverted = lambda row, item: -ctr_scorer(row, item)
        assert flip_accuracy(inverted, build_pairs(9)) == 0.0

    def test_antisymmetry_without_ties(self):
        pairs = build_pairs(15, seed=3)
        acc = flip_accuracy(ctr_scorer, pairs)
        inv = flip_accuracy(lambda r, i: -ctr_scorer(r, i), pairs)
        assert acc + inv == pytest.approx(1.0, abs=1e-15)

    def test_monotone_transform_invariance(self):
        pairs = build_pairs(12, seed=5)
        base = flip_accuracy(ctr_scorer, pairs)
        for transform in (math.exp, lambda s: 3.0 * s - 7.0, lambda s: s**3):
            assert flip_accuracy(lambda r, i: transform(ctr_scorer(r, i)), pairs) == base

    def test_context_oblivious_scorer_is_half(self):
        """Any per-(query, item) table lands at exactly 0.5 on strict flips."""
        rng = np.random.default_rng(8)
        pairs = build_pairs(25, seed=8)
        table = {(p.row_1.query_id, item): float(rng.random()) for p in pairs for item in ("a", "b")}
        oblivious = lambda row, item: table[(row.query_id, item)]
        assert flip_accuracy(oblivious, pairs) == 0.5

    def test_failing_scorer_forfeits_at_half(self):
        def broken(row, item):
            raise RuntimeError("no score")

        assert flip_accuracy(broken, build_pairs(4)) == 0.5

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            flip_accuracy(ctr_scorer, [])


def t_density(x, df):
    log_norm = (
        math.lgamma((df + 1.0) / 2.0)
        - math.lgamma(df / 2.0)
        - 0.5 * math.log(df * math.pi)
    )
    return math.exp(log_norm - ((df + 1.0) / 2.0) * math.log1p(x * x / df))


def p_value_by_quadrature(t, df):
    """Two-sided p via trapezoid integration of the t density on [0, |t|]."""
    grid = np.linspace(0.0, abs(t), 200_001)
    dens = np.array([t_density(x, df) for x in grid])
    inner = float(np.trapezoid(dens, grid))
    return 2.0 * (0.5 - inner)


class TestPairedTTest:
    def test_matches_quadrature_oracle(self):
        rng = np.random.default_rng(606)
        for _ in range(12):
            n = int(rng.integers(3, 40))
            diffs = rng.normal(rng.uniform(-0.05, 0.05), 0.1, size=n)
            if np.std(diffs, ddof=1) == 0.0:
                continue
            t, p = paired_t_test(diffs)
            expected_t = float(np.mean(diffs) / (np.std(diffs, ddof=1) / math.sqrt(n)))
            assert t == pytest.approx(expected_t, abs=1e-12)
            assert p == pytest.approx(p_value_by_quadrature(t, n - 1), abs=1e-6)

    def test_all_zero_diffs(self):
        assert paired_t_test([0.0, 0.0, 0.0]) == (0.0, 1.0)

    def test_constant_nonzero_is_degenerate(self):
        with pytest.raises(DegenerateVariance):
            paired_t_test([0.25, 0.25, 0.25])

    def test_needs_two_diffs(self):
        with pytest.raises(ValueError):
            paired_t_test([0.1])

    def test_p_floor(self):
        t, p = paired_t_test([0.5 + 1e-9 * i for i in range(50)])
        assert p >= 1e-300
        assert t > 1e6


class TestRunExperiment:
    def test_oracle_and_constant_extremes(self):
        pairs = build_pairs(10, seed=1)
        oracle = Model(name="oracle", fit=lambda rows: ctr_scorer)
        report = run_experiment(pairs, [oracle, constant_model()], num_splits=6, seed=0)
        assert report.mean_accuracy["oracle"] == 1.0
        assert report.mean_accuracy["constant"] == 0.5
        assert report.num_pairs == 10
        assert len(report.per_split["oracle"]) == 6

    def test_identical_models_tie_cleanly(self):
        pairs = build_pairs(8, seed=2)
        a = Model(name="a", fit=lambda rows: ctr_scorer)
        b = Model(name="b", fit=lambda rows: ctr_scorer)
        report = run_experiment(pairs, [a, b], num_splits=5, seed=3)
        entry = report.t_tests["a|b"]
        assert not entry["degenerate"]
        assert entry["t"] == 0.0
        assert entry["p"] == 1.0

    def test_reproducible_and_thread_invariant(self):
        pairs = build_pairs(9, seed=4)
        models = [Model(name="oracle", fit=lambda rows: ctr_scorer), constant_model()]
        r1 = run_experiment(pairs, models, num_splits=8, seed=12)
        r2 = run_experiment(pairs, models, num_splits=8, seed=12)
        r4 = run_experiment(pairs, models, num_splits=8, seed=12, threads=4)
        assert r1.to_json() == r2.to_json() == r4.to_json()
        r_other = run_experiment(pairs, models, num_splits=8, seed=13)
        assert r_other.seed == 13
        assert r_other.to_json() != r1.to_json()

    def test_duplicate_model_names_rejected(self):
        pairs = build_pairs(4)
        with pytest.raises(ValueError):
            run_experiment(pairs, [constant_model(), constant_model()], num_splits=2)

    def test_accepts_raw_rows(self):
        rows = []
        for pair in build_pairs(5, seed=9):
            rows.extend([pair.row_1, pair.row_2])
        report = run_experiment(rows, [constant_model()], num_splits=3, seed=0)
        assert report.num_pairs == 5


class TestReportSerialization:
    def report(self):
        pairs = build_pairs(6, seed=6)
        models = [Model(name="oracle", fit=lambda rows: ctr_scorer), constant_model()]
        return run_experiment(pairs, models, num_splits=4, seed=5)

    def test_json_round_trips(self):
        report = self.report()
        payload = json.loads(report.to_json())
        assert payload["models"] == ["oracle", "constant"]
        assert payload["num_splits"] == 4
        assert payload["mean_accuracy"]["oracle"] == 1.0

    def test_splits_csv_shape(self):
        report = self.report()
        lines = report.splits_csv().strip().split("\n")
        assert lines[0] == "split,oracle,constant"
        assert len(lines) == 1 + 4

    def test_text_mentions_every_model(self):
        text = self.report().to_text()
        assert "oracle" in text and "constant" in text


class TestCtrMae:
    def test_perfect_scorer_has_zero_error(self):
        pairs = build_pairs(4)
        rows = [p.row_1 for p in pairs] + [p.row_2 for p in pairs]
        assert ctr_mae(ctr_scorer, rows) == 0.0

    def test_biased_scorer_measured(self):
        pairs = build_pairs(4)
        rows = [p.row_1 for p in pairs]
        biased = lambda row, item: ctr_scorer(row, item) + 0.1
        assert ctr_mae(biased, rows) == pytest.approx(0.1, abs=1e-12)

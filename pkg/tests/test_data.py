"""Click-log parsing, flip mining, splitting and synthetic generation."""

import hashlib
import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rsm import (
    DatasetSchema,
    Direction,
    FeatureSpec,
    FlipPair,
    LogRow,
    SchemaError,
    SplitTooSmall,
    SyntheticSpec,
    WeightVector,
    derive_seed,
    feature_rows_from_logs,
    generate_flip_dataset,
    generate_synthetic,
    load_csv,
    load_instances,
    mine_flip_pairs,
    paired_split,
    save_csv,
    save_instances,
    synthetic_schema,
    training_instances_from_rows,
)

from conftest import make_row

SCHEMA = DatasetSchema(
    features=(
        FeatureSpec("price", Direction.LOWER_IS_BETTER),
        FeatureSpec("rating", Direction.HIGHER_IS_BETTER),
    )
)


def two_context_rows():
    r1 = make_row("q1", "c1", ["a", "b"], [6, 3], {"price": [10.0, 20.0], "rating": [3.0, 4.0]})
    r2 = make_row(
        "q1", "c2", ["a", "b", "c"], [2, 6, 1],
        {"price": [10.0, 20.0, 30.0], "rating": [3.0, 4.0, 5.0]},
    )
    return [r1, r2]


class TestLogRow:
    def test_ctrs_normalize(self):
        row = two_context_rows()[0]
        assert_allclose(row.ctrs(), [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    def test_zero_clicks_have_no_ctrs(self):
        row = make_row("q", "c", ["a", "b"], [0, 0], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        with pytest.raises(ValueError):
            row.ctrs()

    def test_duplicate_items_rejected(self):
        with pytest.raises(ValueError):
            make_row("q", "c", ["a", "a"], [1, 2], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})

    def test_single_item_rejected(self):
        with pytest.raises(ValueError):
            make_row("q", "c", ["a"], [1], {"price": [1.0], "rating": [1.0]})

    def test_negative_clicks_rejected(self):
        with pytest.raises(ValueError):
            make_row("q", "c", ["a", "b"], [1, -2], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})


class TestCsvRoundTrip:
    def test_row_survive_save_and_load(self, tmp_path):
        rows = two_context_rows()
        path = tmp_path / "log.csv"
        save_csv(rows, path, SCHEMA)
        result = load_csv(path, SCHEMA)
        assert result.errors == []
        assert len(result.rows) == 2
        for orig, back in zip(rows, result.rows):
            assert back.items == orig.items
            assert back.query_id == orig.query_id
            assert_allclose(back.clicks, orig.clicks, atol=0)
            for name in SCHEMA.names:
                assert_allclose(back.features[name], orig.features[name], atol=0)

    def test_missing_column_raises(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("query_id,context_id,item_id,position,clicks,price\nq,c,a,1,2,1.0\n")
        with pytest.raises(SchemaError):
            load_csv(path, SCHEMA)

    def test_bad_line_drops_its_context_only(self, tmp_path):
        path = tmp_path / "mixed.csv"
        path.write_text(
            "query_id,context_id,item_id,position,clicks,price,rating\n"
            "q,c1,a,1,3,1.0,2.0\n"
            "q,c1,b,2,4,2.0,3.0\n"
            "q,c2,a,1,oops,1.0,2.0\n"
            "q,c2,b,2,4,2.0,3.0\n"
            "q,c3,a,1,5,1.0,2.0\n"
            "q,c3,b,2,1,2.0,3.0\n"
        )
        result = load_csv(path, SCHEMA)
        assert [r.context_id for r in result.rows] == ["c1", "c3"]
        assert len(result.errors) == 1
        assert result.errors[0].line_number == 4

    def test_single_line_context_reported(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text(
            "query_id,context_id,item_id,position,clicks,price,rating\n"
            "q,c1,a,1,3,1.0,2.0\n"
        )
        result = load_csv(path, SCHEMA)
        assert result.rows == []
        assert len(result.errors) == 1


class TestBundledSample:
    def test_shredder_csv_mines_one_pair(self):
        from importlib import resources

        with resources.as_file(resources.files("rsm") / "data_files" / "shredder.csv") as path:
            schema = DatasetSchema(
                features=(
                    FeatureSpec("price", Direction.LOWER_IS_BETTER),
                    FeatureSpec("sheet_capacity", Direction.HIGHER_IS_BETTER),
                )
            )
            result = load_csv(path, schema)
        assert result.errors == []
        assert len(result.rows) == 2
        pairs = mine_flip_pairs(result.rows)
        assert len(pairs) == 1
        pair = pairs[0]
        assert (pair.item_a, pair.item_b) == ("A", "B")
        assert pair.row_1.context_id == "ctx_small"
        assert pair.row_2.context_id == "ctx_large"


class TestMining:
    def test_canonical_flip(self):
        rows = [
            make_row("q", "c1", ["a", "b"], [7, 3], {"price": [1.0, 2.0], "rating": [1.0, 2.0]}),
            make_row("q", "c2", ["a", "b"], [3, 7], {"price": [1.0, 2.0], "rating": [1.0, 2.0]}),
        ]
        pairs = mine_flip_pairs(rows)
        assert len(pairs) == 1
        assert pairs[0].strength == pytest.approx(0.8)

    def test_total_clicks_threshold_is_strict(self):
        # 4 total clicks on one side kills the pair; 6 restores it
        lo = make_row("q", "c1", ["a", "b"], [3, 1], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        hi = make_row("q", "c2", ["a", "b"], [2, 6], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        assert mine_flip_pairs([lo, hi]) == []
        lo6 = make_row("q", "c1", ["a", "b"], [4, 2], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        assert len(mine_flip_pairs([lo6, hi])) == 1
        # exactly 5 is still excluded (strict inequality)
        lo5 = make_row("q", "c1", ["a", "b"], [4, 1], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        assert mine_flip_pairs([lo5, hi]) == []

    def test_click_difference_threshold(self):
        close = make_row("q", "c1", ["a", "b"], [4, 3], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        other = make_row("q", "c2", ["a", "b"], [2, 6], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        assert mine_flip_pairs([close, other]) == []

    def test_strongest_contexts_chosen(self):
        """With several qualifying contexts per side, the largest CTR gaps win."""
        feats = {"price": [1.0, 2.0], "rating": [1.0, 2.0]}
        rows = [
            make_row("q", "c1", ["a", "b"], [8, 2], feats),   # a-side gap 0.6
            make_row("q", "c2", ["a", "b"], [6, 3], feats),   # a-side gap 1/3
            make_row("q", "c3", ["a", "b"], [3, 9], feats),   # b-side gap 0.5
            make_row("q", "c4", ["a", "b"], [2, 5], feats),   # b-side gap 3/7
        ]
        pairs = mine_flip_pairs(rows)
        assert len(pairs) == 1
        assert pairs[0].row_1.context_id == "c1"
        assert pairs[0].row_2.context_id == "c3"
        assert pairs[0].strength == pytest.approx(0.6 + 0.5)

    def test_matches_exhaustive_oracle(self):
        """Mined choice equals brute force over all qualifying context pairs."""
        rng = np.random.default_rng(606)
        feats = {"price": [1.0, 2.0], "rating": [1.0, 2.0]}
        for trial in range(20):
            rows = []
            for c in range(6):
                clicks = rng.integers(0, 10, size=2)
                rows.append(make_row("q", f"c{c}", ["a", "b"], clicks.tolist(), feats))
            pairs = mine_flip_pairs(rows)
            qualifying = [
                r for r in rows
                if r.total_clicks() > 5 and abs(r.clicks[0] - r.clicks[1]) >= 2
            ]
            a_side = [r for r in qualifying if r.clicks[0] > r.clicks[1]]
            b_side = [r for r in qualifying if r.clicks[1] > r.clicks[0]]
            if not a_side or not b_side:
                assert pairs == []
                continue
            best = max(
                itertools.product(a_side, b_side),
                key=lambda pr: (
                    abs(pr[0].ctrs()[0] - pr[0].ctrs()[1]) + abs(pr[1].ctrs()[0] - pr[1].ctrs()[1]),
                ),
            )
            assert len(pairs) == 1
            got = pairs[0]
            expect_strength = abs(best[0].ctrs()[0] - best[0].ctrs()[1]) + abs(
                best[1].ctrs()[0] - best[1].ctrs()[1]
            )
            assert got.strength == pytest.approx(expect_strength)

    def test_output_sorted_and_items_ordered(self):
        feats3 = {"price": [1.0, 2.0, 3.0], "rating": [1.0, 2.0, 3.0]}
        rows = [
            make_row("q2", "c1", ["z", "y"], [9, 2], {"price": [1.0, 2.0], "rating": [1.0, 2.0]}),
            make_row("q2", "c2", ["z", "y"], [2, 9], {"price": [1.0, 2.0], "rating": [1.0, 2.0]}),
            make_row("q1", "c1", ["m", "k", "p"], [8, 2, 0], feats3),
            make_row("q1", "c2", ["m", "k", "p"], [2, 8, 0], feats3),
        ]
        pairs = mine_flip_pairs(rows)
        keys = [(p.row_1.query_id, p.item_a, p.item_b) for p in pairs]
        assert keys == sorted(keys)
        for p in pairs:
            assert p.item_a < p.item_b


class TestPairedSplit:
    def make_pairs(self, count, prefix="q"):
        feats = {"price": [1.0, 2.0], "rating": [1.0, 2.0]}
        pairs = []
        for i in range(count):
            r1 = make_row(f"{prefix}{i}", "c1", ["a", "b"], [7, 2], feats)
            r2 = make_row(f"{prefix}{i}", "c2", ["a", "b"], [2, 7], feats)
            pairs.append(FlipPair(row_1=r1, row_2=r2, item_a="a", item_b="b", strength=1.0))
        return pairs

    def test_fraction_honored(self):
        pairs = self.make_pairs(10)
        train_rows, test_pairs = paired_split(pairs, train_fraction=0.8, seed=0)
        assert len(test_pairs) == 2
        assert len(train_rows) == 16  # 8 pairs x 2 distinct contexts

    def test_no_row_crosses_sides(self):
        pairs = self.make_pairs(12)
        train_rows, test_pairs = paired_split(pairs, train_fraction=0.75, seed=3)
        train_keys = {(r.query_id, r.context_id) for r in train_rows}
        for pair in test_pairs:
            assert (pair.row_1.query_id, pair.row_1.context_id) not in train_keys
            assert (pair.row_2.query_id, pair.row_2.context_id) not in train_keys

    def test_deterministic_and_order_insensitive(self):
        pairs = self.make_pairs(9)
        _, test_a = paired_split(pairs, seed=11)
        shuffled = [pairs[i] for i in (5, 2, 8, 0, 7, 1, 3, 6, 4)]
        _, test_b = paired_split(shuffled, seed=11)
        key = lambda p: (p.row_1.query_id, p.item_a, p.item_b)
        assert sorted(map(key, test_a)) == sorted(map(key, test_b))
        _, test_c = paired_split(pairs, seed=12)
        assert sorted(map(key, test_a)) != sorted(map(key, test_c)) or len(pairs) < 4

    def test_shared_context_pairs_stay_together(self):
        """Pairs that share a context row must land on the same side."""
        feats3 = {"price": [1.0, 2.0, 3.0], "rating": [1.0, 2.0, 3.0]}
        shared = make_row("q0", "hub", ["a", "b", "c"], [1, 8, 4], feats3)
        r_a = make_row("q0", "edge_a", ["a", "b", "c"], [9, 1, 3], feats3)
        r_c = make_row("q0", "edge_c", ["a", "b", "c"], [2, 3, 9], feats3)
        p1 = FlipPair(row_1=r_a, row_2=shared, item_a="a", item_b="b", strength=1.0)
        p2 = FlipPair(row_1=shared, row_2=r_c, item_a="b", item_b="c", strength=1.0)
        pairs = self.make_pairs(8, prefix="filler") + [p1, p2]
        for seed in range(12):
            train_rows, test_pairs = paired_split(pairs, train_fraction=0.7, seed=seed)
            test_set = {
                (p.row_1.query_id, p.item_a, p.item_b) for p in test_pairs
            }
            linked = {("q0", "a", "b") in test_set, ("q0", "b", "c") in test_set}
            assert linked in ({True}, {False})

    def test_too_few_pairs(self):
        with pytest.raises(SplitTooSmall):
            paired_split(self.make_pairs(1))

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            paired_split(self.make_pairs(4), train_fraction=1.0)


class TestSyntheticGeneration:
    def test_labels_are_stationary_distributions(self):
        spec = SyntheticSpec(k=3, num_queries=6, weights=WeightVector(np.array([0.5, 0.3, 0.2])), seed=5)
        data = generate_synthetic(spec)
        assert len(data.instances) == 6 * 5
        assert data.rows == []
        by_query = {}
        for inst in data.instances:
            by_query.setdefault(inst.query_id, []).append(inst.target_prob)
        for probs in by_query.values():
            assert abs(sum(probs) - 1.0) < 1e-10

    def test_click_noise_produces_rows(self):
        spec = SyntheticSpec(
            k=2, num_queries=4, weights=WeightVector(np.array([0.7, 0.3])),
            clicks_per_context=200, seed=9,
        )
        data = generate_synthetic(spec)
        assert len(data.rows) == 4
        for row in data.rows:
            assert row.total_clicks() == 200

    def test_seed_reproducibility(self):
        spec = SyntheticSpec(k=2, num_queries=5, weights=WeightVector(np.array([0.6, 0.4])),
                             clicks_per_context=50, seed=123)
        d1 = generate_synthetic(spec)
        d2 = generate_synthetic(spec)
        for a, b in zip(d1.instances, d2.instances):
            assert a.target_prob == b.target_prob
        for ra, rb in zip(d1.rows, d2.rows):
            assert np.array_equal(ra.clicks, rb.clicks)

    def test_multinomial_concentration(self):
        """Huge click counts pin the empirical CTRs to the true stationary."""
        spec = SyntheticSpec(
            k=2, num_queries=5, weights=WeightVector(np.array([0.6, 0.4])),
            clicks_per_context=1_000_000, seed=77,
        )
        data = generate_synthetic(spec)
        targets = {}
        for inst in data.instances:
            targets[(inst.query_id, inst.item_ids[inst.target_index])] = inst.target_prob
        for row in data.rows:
            ctr = row.ctrs()
            for i, item in enumerate(row.items):
                assert abs(ctr[i] - targets[(row.query_id, item)]) < 5e-3

    def test_flip_dataset_contains_real_flips(self):
        data = generate_flip_dataset(
            num_queries=12,
            weights=WeightVector(np.array([0.5, 0.3, 0.2])),
            clicks_per_context=10_000,
            margin=0.02,
            seed=4,
        )
        assert len(data.rows) % 2 == 0
        assert len(data.rows) >= 12  # rejection sampling found most queries
        pairs = mine_flip_pairs(data.rows)
        assert pairs
        # the engineered flip is between the two shared items of each query
        shared_pairs = [p for p in pairs if p.item_a.endswith("i0") or p.item_a.endswith("i1")]
        assert shared_pairs


class TestInstanceFiles:
    def test_round_trip_and_topology_sharing(self, tmp_path):
        rng = np.random.default_rng(15)
        spec = SyntheticSpec(k=2, num_queries=3, weights=WeightVector(np.array([0.6, 0.4])), seed=2)
        data = generate_synthetic(spec)
        path = tmp_path / "inst.json"
        save_instances(data.instances, path)
        back = load_instances(path)
        assert len(back) == len(data.instances)
        for orig, copy in zip(data.instances, back):
            assert copy.query_id == orig.query_id
            assert copy.item_ids == orig.item_ids
            assert copy.target_index == orig.target_index
            assert copy.target_prob == pytest.approx(orig.target_prob, abs=1e-15)
            for t_orig, t_copy in zip(orig.topologies, copy.topologies):
                assert_allclose(t_copy.matrix.entries, t_orig.matrix.entries, atol=1e-15)
        # instances of one context share one topology tuple after loading
        assert back[0].topologies is back[1].topologies

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"instances": [{"query_id": "q"}]}')
        with pytest.raises(SchemaError):
            load_instances(path)


class TestBridges:
    def test_training_instances_use_ctr_targets(self):
        rows = two_context_rows()
        instances = training_instances_from_rows(rows, SCHEMA)
        assert len(instances) == 2 + 3
        assert instances[0].target_prob == pytest.approx(2.0 / 3.0)
        assert instances[0].topologies is instances[1].topologies

    def test_zero_click_contexts_skipped(self):
        quiet = make_row("q", "c0", ["a", "b"], [0, 0], {"price": [1.0, 2.0], "rating": [1.0, 2.0]})
        instances = training_instances_from_rows([quiet] + two_context_rows(), SCHEMA)
        assert len(instances) == 5

    def test_feature_rows_append_position(self):
        rows = feature_rows_from_logs(two_context_rows(), SCHEMA, include_position=True)
        assert rows[0].features.size == 3
        assert rows[0].features[-1] == 1.0
        bare = feature_rows_from_logs(two_context_rows(), SCHEMA, include_position=False)
        assert bare[0].features.size == 2


class TestDeriveSeed:
    def test_frozen_value(self):
        digest = hashlib.sha256(b"0:split:0").digest()
        assert derive_seed(0, "split:0") == int.from_bytes(digest[:8], "little")

    def test_labels_differ(self):
        seeds = {derive_seed(7, f"label{i}") for i in range(50)}
        assert len(seeds) == 50

    def test_base_matters(self):
        assert derive_seed(1, "x") != derive_seed(2, "x")


class TestSchema:
    def test_duplicate_feature_names_rejected(self):
        with pytest.raises(SchemaError):
            DatasetSchema(features=(FeatureSpec("f"), FeatureSpec("f")))

    def test_base_column_collision_rejected(self):
        with pytest.raises(SchemaError):
            DatasetSchema(features=(FeatureSpec("clicks"),))

    def test_synthetic_schema_names(self):
        schema = synthetic_schema(3)
        assert schema.names == ("f0", "f1", "f2")
        assert all(f.direction is Direction.HIGHER_IS_BETTER for f in schema.features)

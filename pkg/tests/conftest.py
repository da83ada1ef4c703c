"""Shared builders for the test suite. Everything is seeded and pure."""

import numpy as np

from rsm import (
    Direction,
    LogRow,
    TrainingInstance,
    WeightVector,
    combine,
    encode_rank_topology,
    stationary,
)


def random_topologies(rng, n, k, items=None):
    """k independent rank topologies over one random context of n items."""
    items = items if items is not None else tuple(f"i{j}" for j in range(n))
    return tuple(
        encode_rank_topology(rng.random(n), Direction.HIGHER_IS_BETTER, items, f"f{i}")
        for i in range(k)
    )


def random_reporting_weights(rng, k):
    values = rng.random(k) + 0.05
    return WeightVector(values / values.sum())


def noise_free_instances(rng, num_queries, n, k, weights, lam):
    """Instances labeled with true stationary probabilities, one per item."""
    out = []
    for q in range(num_queries):
        items = tuple(f"q{q}_i{j}" for j in range(n))
        topologies = random_topologies(rng, n, k, items)
        probs = stationary(combine(topologies, weights, lam)).probs
        for u in range(n):
            out.append(
                TrainingInstance(
                    query_id=f"q{q}",
                    item_ids=items,
                    topologies=topologies,
                    target_index=u,
                    target_prob=float(probs[u]),
                )
            )
    return out


def make_row(query, context, items, clicks, feature_table, positions=None):
    """LogRow shorthand: feature_table maps name -> per-item values."""
    n = len(items)
    return LogRow(
        query_id=query,
        context_id=context,
        items=tuple(items),
        positions=positions if positions is not None else list(range(1, n + 1)),
        clicks=clicks,
        features={name: vals for name, vals in feature_table.items()},
    )

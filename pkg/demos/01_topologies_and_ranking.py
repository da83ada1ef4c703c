"""Walk through rank topologies: from raw feature values to a ranking.

Run with: python3 demos/01_topologies_and_ranking.py
"""

import numpy as np

from rsm import (
    Direction,
    WeightVector,
    combine,
    encode_rank_topology,
    rank_items,
    restrict,
    stationary,
)

np.set_printoptions(precision=4, suppress=True)

# A tiny laptop catalog. Shoppers care about price (lower is better) and
# battery life (higher is better).
items = ("aurora", "bolt", "comet", "drift")
price = [1150.0, 680.0, 950.0, 680.0]
battery = [11.0, 7.5, 9.0, 13.5]

print("catalog:")
for it, p, b in zip(items, price, battery):
    print(f"  {it:<8} ${p:7.0f}   {b:4.1f} h")

# Each feature becomes its own Markov chain over the context. Transition
# probability mass drains toward items the feature prefers; ties (the two
# $680 laptops) share an average rank.
t_price = encode_rank_topology(price, Direction.LOWER_IS_BETTER, items, "price")
t_battery = encode_rank_topology(battery, Direction.HIGHER_IS_BETTER, items, "battery")

print("\nprice topology (rows = from, cols = to):")
print(t_price.matrix.entries)
print("\nbattery topology:")
print(t_battery.matrix.entries)

# A shopper follows the price chain with weight 0.7 and the battery chain
# with weight 0.3, and teleports to a uniformly random item 15% of the time.
# The restart guarantees a unique long-run occupancy no matter the weights.
weights = WeightVector(np.array([0.7, 0.3]))
chain = combine((t_price, t_battery), weights, lam=0.15)
dist = stationary(chain)

print("\nstationary occupancy at weights (price 0.7, battery 0.3):")
for it, prob in zip(items, dist.probs):
    print(f"  {it:<8} {prob:.4f}")
print("ranking:", " > ".join(name for name, _ in rank_items(chain, items)))

# Rankings are context-relative. Drop the cheap laptops and the remaining
# two are re-ranked from their restricted chains, not from global scores.
subset = ("aurora", "comet")
sub_chain = combine(
    (restrict(t_price, subset), restrict(t_battery, subset)), weights, lam=0.15
)
print("\nsame weights, context reduced to {aurora, comet}:")
for it, prob in zip(subset, stationary(sub_chain).probs):
    print(f"  {it:<8} {prob:.4f}")
print("ranking:", " > ".join(name for name, _ in rank_items(sub_chain, subset)))

"""Feature topologies: Markov chains over the items of a context.

A feature turns its per-item values into a random walk that drifts toward
more desirable items. Items are ranked 1..n by feature value with rank n the
most desired; the transition weight from item i to item j is
``n + rank(j) - rank(i)``, rows normalized to sum 1. The encoding depends
only on the ordering of the values, so any monotone rescaling of a feature
yields the same topology. Tied values receive average ranks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import config
from .errors import ContextTooSmall, DanglingItem, ShapeError
from .markov import Distribution, StochasticMatrix, stationary


class Direction(enum.Enum):
    """Whether larger or smaller feature values are more desirable."""

    HIGHER_IS_BETTER = "higher"
    LOWER_IS_BETTER = "lower"


class FeatureKind(enum.Enum):
    NUMERIC = "numeric"
    # Categorical features arrive pre-mapped to numeric scores in the data
    # (e.g. a brand column carrying -1/0/+1); the encoder never maps them.
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    """Name, desirability direction and kind of one feature column."""

    name: str
    direction: Direction = Direction.HIGHER_IS_BETTER
    kind: FeatureKind = FeatureKind.NUMERIC

    def __post_init__(self):
        if not self.name:
            raise ValueError("feature name must be nonempty")


@dataclass(frozen=True, eq=False)
class Topology:
    """One feature's transition chain over the items of a context."""

    feature: str
    matrix: StochasticMatrix
    item_ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if len(self.item_ids) != self.matrix.n:
            raise ShapeError("item list length does not match the matrix size")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValueError("item ids must be unique")

    @property
    def n(self) -> int:
        return self.matrix.n


class Normalization(enum.Enum):
    """Weight vector conventions.

    ``SUMS_TO_ONE`` is the public reporting form; the restart probability is
    applied externally when combining. ``SUMS_TO_ONE_MINUS_LAMBDA`` is the
    learner-native form whose box constraints read directly in weight units.
    Converting between the two is a pure rescale by ``1 - lambda``.
    """

    SUMS_TO_ONE = "sums_to_one"
    SUMS_TO_ONE_MINUS_LAMBDA = "sums_to_one_minus_lambda"


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Nonnegative feature weights under a declared normalization.

    ``lam`` is required for the learner-native form so the sum invariant can
    be checked; it is ignored for the reporting form.
    """

    values: np.ndarray
    normalization: Normalization = Normalization.SUMS_TO_ONE
    lam: Optional[float] = None

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeError(f"weights must be a 1-d vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("weights must be finite")
        if np.any(arr < 0.0):
            raise ValueError("weights must be nonnegative")
        if self.normalization is Normalization.SUMS_TO_ONE_MINUS_LAMBDA:
            if self.lam is None:
                raise ValueError("learner-native weights require lam")
            if not 0.0 < self.lam < 1.0:
                raise ValueError("lam must lie in (0, 1)")
            target = 1.0 - self.lam
        else:
            target = 1.0
        if abs(arr.sum() - target) > config.WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to {target}, got {arr.sum()!r}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def k(self) -> int:
        return self.values.size

    def as_reporting(self) -> "WeightVector":
        if self.normalization is Normalization.SUMS_TO_ONE:
            return self
        return WeightVector(self.values / (1.0 - self.lam))

    def as_native(self, lam: float) -> "WeightVector":
        if self.normalization is Normalization.SUMS_TO_ONE_MINUS_LAMBDA:
            if abs(self.lam - lam) > 1e-15:
                raise ValueError("weight vector is native under a different lam")
            return self
        return WeightVector(
            self.values * (1.0 - lam),
            normalization=Normalization.SUMS_TO_ONE_MINUS_LAMBDA,
            lam=lam,
        )


def encode_rank_topology(
    values: Sequence[float],
    direction: Direction = Direction.HIGHER_IS_BETTER,
    item_ids: Optional[Sequence] = None,
    feature: str = "feature",
) -> Topology:
    """Encode feature values as a rank-based transition chain.

    Parameters
    ----------
    values : sequence of float, length n >= 2
        Feature value per item.
    direction : Direction
        Which end of the value scale is desirable.
    item_ids : sequence, optional
        Item identifiers; defaults to ``item0..item{n-1}``.
    feature : str
        Feature name stored on the topology.

    Returns
    -------
    Topology
        Rows sum to 1; every entry is strictly positive because the edge
        weights ``n + rank(j) - rank(i)`` stay within ``[1, 2n - 1]``.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 1:
        raise ShapeError("values must be a 1-d sequence")
    n = vals.size
    if n < 2:
        raise ContextTooSmall(f"a context needs at least two items, got {n}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("feature values must be finite")
    desirability = vals if direction is Direction.HIGHER_IS_BETTER else -vals
    ranks = rankdata(desirability, method="average")
    weights = n + ranks[None, :] - ranks[:, None]
    entries = weights / weights.sum(axis=1, keepdims=True)
    if item_ids is None:
        item_ids = tuple(f"item{i}" for i in range(n))
    return Topology(feature=feature, matrix=StochasticMatrix(entries), item_ids=tuple(item_ids))


def restrict(topology: Topology, subset: Sequence) -> Topology:
    """Restrict a topology to a sub-context and renormalize the rows.

    ``subset`` must name at least two items of the topology; the result uses
    the order given. Raises ``DanglingItem`` if a restricted row has no
    remaining transition mass to renormalize.
    """
    subset = tuple(subset)
    if len(subset) < 2:
        raise ContextTooSmall(f"a context needs at least two items, got {len(subset)}")
    if len(set(subset)) != len(subset):
        raise ValueError("subset items must be unique")
    index = {item: i for i, item in enumerate(topology.item_ids)}
    try:
        idx = [index[item] for item in subset]
    except KeyError as exc:
        raise ValueError(f"item {exc.args[0]!r} is not part of the topology") from exc
    sub = topology.matrix.entries[np.ix_(idx, idx)]
    sums = sub.sum(axis=1)
    dead = np.nonzero(sums <= 0.0)[0]
    if dead.size:
        raise DanglingItem(f"item {subset[dead[0]]!r} has no outgoing mass after restriction")
    return Topology(
        feature=topology.feature,
        matrix=StochasticMatrix(sub / sums[:, None]),
        item_ids=subset,
    )


def combine(
    topologies: Sequence[Topology],
    weights: WeightVector,
    lam: float = config.DEFAULT_LAMBDA,
) -> StochasticMatrix:
    """Mix topologies into one chain with a uniform restart.

    Returns ``lam * U_n + (1 - lam) * sum_i w_i T_i`` for reporting-form
    weights ``w``. Every entry of the result is at least ``lam / n``, so the
    combined chain always has a unique stationary distribution.
    """
    if not topologies:
        raise ValueError("need at least one topology")
    if weights.normalization is not Normalization.SUMS_TO_ONE:
        raise ValueError("combine expects reporting-form weights; convert with as_reporting()")
    if weights.k != len(topologies):
        raise ShapeError(f"{len(topologies)} topologies but {weights.k} weights")
    if not 0.0 < lam < 1.0:
        raise ValueError("lam must lie in (0, 1)")
    first = topologies[0]
    for top in topologies[1:]:
        if top.item_ids != first.item_ids:
            raise ShapeError("all topologies must cover the same items in the same order")
    n = first.n
    mix = np.zeros((n, n))
    for w, top in zip(weights.values, topologies):
        mix += w * top.matrix.entries
    return StochasticMatrix(lam / n + (1.0 - lam) * mix)


def rank_items(combined: StochasticMatrix, item_ids: Sequence, tie_tol: float = 1e-12) -> list:
    """Rank items by stationary probability, descending.

    Probabilities within ``tie_tol`` of each other count as tied and are
    ordered by item id ascending; otherwise solver roundoff would decide the
    order of mathematically tied items. Returns ``(item_id, probability)``
    pairs.
    """
    item_ids = tuple(item_ids)
    if len(item_ids) != combined.n:
        raise ShapeError("item list length does not match the matrix size")
    probs = stationary(combined).probs
    by_prob = sorted(range(len(item_ids)), key=lambda i: -probs[i])
    order: list = []
    group: list = [by_prob[0]]
    for i in by_prob[1:]:
        if probs[group[0]] - probs[i] <= tie_tol:
            group.append(i)
        else:
            order.extend(sorted(group, key=lambda g: item_ids[g]))
            group = [i]
    order.extend(sorted(group, key=lambda g: item_ids[g]))
    return [(item_ids[i], float(probs[i])) for i in order]

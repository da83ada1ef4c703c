"""Score-based baselines: regularized least squares on raw feature values.

The linear model predicts an item's click-through rate from its own feature
vector, independent of which other items surround it. Features are
standardized before solving; the returned coefficients are folded back to
raw feature units so prediction is a plain affine map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from . import config
from .errors import ShapeError


@dataclass(frozen=True, eq=False)
class FeatureRow:
    """One (query, item) observation with its feature vector and CTR."""

    query_id: str
    item_id: str
    features: np.ndarray
    ctr: float

    def __post_init__(self):
        arr = np.array(self.features, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError("features must be a 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("features must be finite")
        if not 0.0 <= self.ctr <= 1.0:
            raise ValueError("ctr must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "features", arr)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Affine CTR predictor in raw feature units.

    ``used_ridge`` flags that the design was rank deficient and a small
    ridge term (tau = config.RIDGE_TAU) produced the coefficients.
    """

    coefficients: np.ndarray
    intercept: float
    used_ridge: bool = False

    def __post_init__(self):
        arr = np.array(self.coefficients, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError("coefficients must be a 1-d vector")
        arr.flags.writeable = False
        object.__setattr__(self, "coefficients", arr)

    @property
    def k(self) -> int:
        return self.coefficients.size


def fit_least_squares(rows: Sequence[FeatureRow]) -> LinearModel:
    """Least-squares CTR regression with standardization.

    Features are centered and scaled to unit variance (constant columns are
    left centered only), the intercept absorbs the target mean, and the
    solution is folded back to raw units. A rank-deficient design falls back
    to ridge with ``tau = config.RIDGE_TAU`` and flags the result.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("need at least one row")
    k = rows[0].features.size
    for row in rows:
        if row.features.size != k:
            raise ShapeError("all rows must share the same feature arity")
    if len(rows) < k + 1:
        raise ValueError(f"need at least {k + 1} rows to fit {k} coefficients")
    design = np.vstack([row.features for row in rows])
    target = np.array([row.ctr for row in rows])
    mean = design.mean(axis=0)
    scale = design.std(axis=0)
    scale[scale == 0.0] = 1.0
    standardized = (design - mean) / scale
    target_mean = target.mean()
    centered = target - target_mean
    sol, _, rank, _ = np.linalg.lstsq(standardized, centered, rcond=None)
    used_ridge = False
    if rank < k:
        gram = standardized.T @ standardized + config.RIDGE_TAU * np.eye(k)
        sol = np.linalg.solve(gram, standardized.T @ centered)
        used_ridge = True
    coefficients = sol / scale
    intercept = target_mean - float(coefficients @ mean)
    return LinearModel(coefficients=coefficients, intercept=intercept, used_ridge=used_ridge)


def predict(model: LinearModel, row: FeatureRow) -> float:
    """Predicted score for one row. No clamping; scores may leave [0, 1]."""
    if row.features.size != model.k:
        raise ShapeError(f"row has {row.features.size} features, model expects {model.k}")
    return float(model.intercept + model.coefficients @ row.features)


@dataclass(frozen=True, eq=False)
class ConstantScores:
    """Context-oblivious lookup: mean training CTR per (query, item)."""

    table: Dict[Tuple[str, str], float]

    def score(self, query_id: str, item_id: str) -> float:
        return self.table.get((query_id, item_id), 0.0)


def constant_scorer(rows: Sequence[FeatureRow]) -> ConstantScores:
    """Build the per-(query, item) mean-CTR table.

    The score of a pair is identical in every context, so this scorer can
    never predict a preference flip.
    """
    sums: Dict[Tuple[str, str], list] = {}
    for row in rows:
        bucket = sums.setdefault((row.query_id, row.item_id), [0.0, 0])
        bucket[0] += row.ctr
        bucket[1] += 1
    return ConstantScores({key: total / count for key, (total, count) in sums.items()})

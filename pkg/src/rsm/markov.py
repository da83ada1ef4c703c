"""Dense Markov chain kernel.

Stationary distributions, the limiting matrix, the fundamental matrix and
first-order stationary shifts for row-stochastic transition matrices. All
matrices are small and dense; everything is plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import config
from .errors import NoUniqueStationary, ShapeError, SingularFundamental


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Row-stochastic transition matrix over ``n`` states.

    Parameters
    ----------
    entries : array_like, shape (n, n)
        Nonnegative transition weights. Every row must sum to
        ``1 - row_deficit`` within ``config.ROW_SUM_TOL``.
    row_deficit : float, optional
        Flags the substochastic variant. A plain stochastic matrix has
        deficit 0; a matrix whose rows each leak ``d`` of their mass (for
        example after subtracting a rank-one restart term) carries
        ``row_deficit=d``. The arithmetic is shared, only the row-sum
        invariant changes.
    """

    entries: np.ndarray
    row_deficit: float = 0.0

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ShapeError("matrix must have at least one state")
        if not np.all(np.isfinite(arr)):
            raise ValueError("transition entries must be finite")
        if np.any(arr < 0.0):
            raise ValueError("transition entries must be nonnegative")
        if not 0.0 <= self.row_deficit < 1.0:
            raise ValueError("row_deficit must lie in [0, 1)")
        target = 1.0 - self.row_deficit
        gap = np.max(np.abs(arr.sum(axis=1) - target))
        if gap > config.ROW_SUM_TOL:
            raise ValueError(
                f"rows must sum to {target} within {config.ROW_SUM_TOL}, worst gap {gap:.3e}"
            )
        object.__setattr__(self, "entries", _freeze(arr))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "StochasticMatrix":
        """The uniform chain U_n with every entry 1/n."""
        return cls(np.full((n, n), 1.0 / n))


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability distribution over ``n`` states."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeError(f"expected a 1-d probability vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probabilities must be finite")
        if np.any(arr < 0.0):
            raise ValueError("probabilities must be nonnegative")
        if abs(arr.sum() - 1.0) > config.DIST_SUM_TOL:
            raise ValueError(f"probabilities must sum to 1, got {arr.sum()!r}")
        object.__setattr__(self, "probs", _freeze(arr))

    @property
    def n(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """Fundamental matrix ``Z = (I - (P - 1 p^T))^{-1}`` with its stationary ``p``.

    Constructed by :func:`fundamental_matrix`, which verifies
    ``Z (I - (P - 1 p^T)) = I`` within ``config.FUNDAMENTAL_CHECK_TOL``.
    """

    z: np.ndarray
    stationary: Distribution

    def __post_init__(self):
        arr = np.array(self.z, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"expected a square matrix, got shape {arr.shape}")
        if arr.shape[0] != self.stationary.n:
            raise ShapeError("fundamental matrix and stationary distribution disagree on n")
        object.__setattr__(self, "z", _freeze(arr))

    @property
    def n(self) -> int:
        return self.z.shape[0]


def _power_iteration(entries: np.ndarray) -> np.ndarray:
    n = entries.shape[0]
    x = np.full(n, 1.0 / n)
    for _ in range(config.POWER_ITER_MAX_STEPS):
        nxt = x @ entries
        if np.abs(nxt - x).sum() <= config.POWER_ITER_TOL:
            return nxt
        x = nxt
    raise NoUniqueStationary(
        "power iteration did not converge; the chain is likely periodic or reducible"
    )


def stationary(matrix: StochasticMatrix) -> Distribution:
    """Solve ``p^T P = p^T`` with ``sum(p) = 1``.

    Uses a direct least-squares solve of the augmented (n+1)-row system for
    ``n <= config.DIRECT_SOLVE_MAX_N`` and power iteration above that.

    Raises
    ------
    NoUniqueStationary
        If the linear system is rank deficient (several stationary
        distributions, e.g. the identity chain), if the solution leaves the
        simplex, or if power iteration fails to converge.
    """
    if matrix.row_deficit != 0.0:
        raise ValueError("stationary distributions are defined for stochastic matrices only")
    n = matrix.n
    if n <= config.DIRECT_SOLVE_MAX_N:
        system = np.vstack([matrix.entries.T - np.eye(n), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[n] = 1.0
        sol, _, rank, _ = np.linalg.lstsq(system, rhs, rcond=None)
        if rank < n:
            raise NoUniqueStationary(
                f"stationarity system has rank {rank} < {n}; multiple stationary distributions"
            )
        probs = sol
    else:
        probs = _power_iteration(matrix.entries)
    if probs.min() < -config.STATIONARY_RESIDUAL_TOL:
        raise NoUniqueStationary("stationary solution leaves the probability simplex")
    probs = np.clip(probs, 0.0, None)
    probs = probs / probs.sum()
    residual = np.max(np.abs(probs @ matrix.entries - probs))
    if residual > config.STATIONARY_RESIDUAL_TOL:
        raise NoUniqueStationary(f"stationary residual {residual:.3e} exceeds tolerance")
    return Distribution(probs)


def limiting_matrix(matrix: StochasticMatrix) -> np.ndarray:
    """The rank-one limiting matrix ``1 p^T`` (every row is the stationary)."""
    p = stationary(matrix)
    return np.outer(np.ones(matrix.n), p.probs)


def fundamental_matrix(matrix: StochasticMatrix) -> FundamentalMatrix:
    """Invert ``I - (P - 1 p^T)`` and verify the construction.

    Raises
    ------
    SingularFundamental
        If the core matrix is singular or the inverse fails its residual
        check at ``config.FUNDAMENTAL_CHECK_TOL``.
    NoUniqueStationary
        Propagated from the stationary solve.
    """
    p = stationary(matrix)
    n = matrix.n
    core = np.eye(n) - (matrix.entries - np.outer(np.ones(n), p.probs))
    try:
        z = np.linalg.inv(core)
    except np.linalg.LinAlgError as exc:
        raise SingularFundamental("fundamental matrix system is singular") from exc
    residual = np.max(np.abs(z @ core - np.eye(n)))
    if residual > config.FUNDAMENTAL_CHECK_TOL:
        raise SingularFundamental(
            f"fundamental matrix residual {residual:.3e} exceeds {config.FUNDAMENTAL_CHECK_TOL}"
        )
    return FundamentalMatrix(z=z, stationary=p)


def stationary_shift(p_from: Distribution, delta: np.ndarray, z: FundamentalMatrix) -> np.ndarray:
    """First-order stationary shift ``p_from^T delta Z``.

    With ``delta = P - P*`` and ``z`` the fundamental matrix of ``P*``, this
    equals ``p - p*`` exactly, where ``p`` is the stationary of ``P`` and
    ``p*`` that of ``P*``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (p_from.n, p_from.n):
        raise ShapeError(f"delta has shape {delta.shape}, expected {(p_from.n, p_from.n)}")
    if z.n != p_from.n:
        raise ShapeError("fundamental matrix size does not match the distribution")
    return p_from.probs @ delta @ z.z

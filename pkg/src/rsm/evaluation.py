"""Flip-prediction experiments: repeated paired splits and significance tests.

A model here is anything with a name and a ``fit(train_rows)`` method that
returns a scorer; a scorer maps ``(row, item_id)`` to a real-valued score,
higher meaning more preferred within that context. Accuracy is measured on
held-out flip pairs, two comparisons per pair.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import stdtr

from . import config, learner
from .baselines import FeatureRow, constant_scorer, fit_least_squares, predict
from .data import (
    DatasetSchema,
    FlipPair,
    LogRow,
    derive_seed,
    feature_rows_from_logs,
    mine_flip_pairs,
    paired_split,
    topologies_from_row,
    training_instances_from_rows,
)
from .errors import DegenerateVariance, SplitTooSmall
from .markov import stationary
from .topology import WeightVector, combine

log = logging.getLogger(__name__)

ScorerFn = Callable[[LogRow, object], float]


@dataclass(frozen=True)
class Model:
    """A named factory: fit on training rows, get back a scorer."""

    name: str
    fit: Callable[[Sequence[LogRow]], ScorerFn]


# ---------------------------------------------------------------------------
# Model factories.
# ---------------------------------------------------------------------------


def rsm_model(
    schema: DatasetSchema,
    cfg: Optional[learner.LearnerConfig] = None,
    name: str = "rsm",
) -> Model:
    """Random-shopper model: learn topology weights, score by stationary mass.

    Scores are computed per context from the fitted mixture, so the same
    item can score differently in different contexts; that is the point.
    """
    cfg = cfg or learner.LearnerConfig()

    def fit_fn(train_rows: Sequence[LogRow]) -> ScorerFn:
        instances = training_instances_from_rows(train_rows, schema)
        result = learner.fit(instances, cfg)
        weights = result.weights
        cache: Dict[Tuple[str, str], Dict[object, float]] = {}

        def scorer(row: LogRow, item_id) -> float:
            key = (row.query_id, row.context_id)
            table = cache.get(key)
            if table is None:
                combined = combine(topologies_from_row(row, schema), weights, cfg.lam)
                probs = stationary(combined).probs
                table = dict(zip(row.items, probs))
                cache[key] = table
            return float(table[item_id])

        return scorer

    return Model(name=name, fit=fit_fn)


def fixed_weights_model(
    schema: DatasetSchema,
    weights: WeightVector,
    lam: float = config.DEFAULT_LAMBDA,
    name: str = "rsm_true",
) -> Model:
    """Random-shopper scorer with known weights; no fitting. For oracles."""

    def fit_fn(train_rows: Sequence[LogRow]) -> ScorerFn:
        def scorer(row: LogRow, item_id) -> float:
            combined = combine(topologies_from_row(row, schema), weights, lam)
            probs = stationary(combined).probs
            return float(probs[row.index_of(item_id)])

        return scorer

    return Model(name=name, fit=fit_fn)


def least_squares_model(
    schema: DatasetSchema, include_position: bool = True, name: str = "least_squares"
) -> Model:
    """Linear CTR regression on raw feature values (plus display position)."""

    def fit_fn(train_rows: Sequence[LogRow]) -> ScorerFn:
        model = fit_least_squares(feature_rows_from_logs(train_rows, schema, include_position))

        def scorer(row: LogRow, item_id) -> float:
            i = row.index_of(item_id)
            values = [row.features[name_][i] for name_ in schema.names]
            if include_position:
                values.append(float(row.positions[i]))
            probe = FeatureRow(
                query_id=row.query_id, item_id=str(item_id), features=np.array(values), ctr=0.0
            )
            return predict(model, probe)

        return scorer

    return Model(name=name, fit=fit_fn)


def true_ctr_model(name: str = "train_ctr") -> Model:
    """Memorizes each (query, item) mean training CTR. Context-oblivious."""

    def fit_fn(train_rows: Sequence[LogRow]) -> ScorerFn:
        table = constant_scorer(feature_rows_from_logs(train_rows, DatasetSchema(features=()), False))

        def scorer(row: LogRow, item_id) -> float:
            return table.score(row.query_id, item_id)

        return scorer

    return Model(name=name, fit=fit_fn)


def constant_model(name: str = "constant") -> Model:
    """Scores every item identically. Lands exactly at chance on flip pairs."""

    def fit_fn(train_rows: Sequence[LogRow]) -> ScorerFn:
        return lambda row, item_id: 0.0

    return Model(name=name, fit=fit_fn)


# ---------------------------------------------------------------------------
# Accuracy and significance.
# ---------------------------------------------------------------------------


def _credit(preferred: Optional[float], other: Optional[float]) -> float:
    if preferred is None or other is None:
        return 0.5
    if preferred > other:
        return 1.0
    if preferred == other:
        return 0.5
    return 0.0


def flip_accuracy(scorer: ScorerFn, pairs: Sequence[FlipPair]) -> float:
    """Fraction of flip comparisons a scorer gets right.

    Each pair contributes two comparisons: in row_1 the preferred item is a,
    in row_2 it is b. Full credit for ranking the preferred item strictly
    higher, half for an exact tie, none otherwise. A scorer failure on an
    item forfeits that comparison at half credit.
    """
    if not pairs:
        raise ValueError("flip_accuracy needs at least one pair")
    cache: Dict[Tuple[str, str, object], Optional[float]] = {}

    def get(row: LogRow, item) -> Optional[float]:
        key = (row.query_id, row.context_id, item)
        if key not in cache:
            try:
                cache[key] = float(scorer(row, item))
            except Exception as exc:  # noqa: BLE001 - scorer is user code
                log.warning("scorer failed on %s/%s item %r: %s", row.query_id, row.context_id, item, exc)
                cache[key] = None
        return cache[key]

    total = 0.0
    for pair in pairs:
        total += _credit(get(pair.row_1, pair.item_a), get(pair.row_1, pair.item_b))
        total += _credit(get(pair.row_2, pair.item_b), get(pair.row_2, pair.item_a))
    return total / (2 * len(pairs))


def ctr_mae(scorer: ScorerFn, rows: Sequence[LogRow]) -> float:
    """Mean absolute gap between scores and observed CTRs.

    Diagnostic only; it treats scores as probabilities, which is meaningful
    for stationary-mass scorers and not for arbitrary ones.
    """
    errors = []
    for row in rows:
        if row.total_clicks() <= 0:
            continue
        ctr = row.ctrs()
        for i, item in enumerate(row.items):
            errors.append(abs(float(scorer(row, item)) - ctr[i]))
    if not errors:
        raise ValueError("no clicked rows to evaluate")
    return float(np.mean(errors))


def paired_t_test(diffs: Sequence[float]) -> Tuple[float, float]:
    """Two-sided paired t-test on per-split accuracy differences.

    Returns ``(t, p)``. All-zero differences are a degenerate perfect tie
    and come back as (0.0, 1.0); zero variance around a nonzero mean has no
    finite statistic and raises ``DegenerateVariance``.
    """
    diffs = np.asarray(diffs, dtype=np.float64)
    n = diffs.size
    if n < 2:
        raise ValueError("paired t-test needs at least two differences")
    if np.all(diffs == 0.0):
        return 0.0, 1.0
    sd = float(np.std(diffs, ddof=1))
    if sd == 0.0:
        raise DegenerateVariance(
            "differences are constant and nonzero; the t statistic is unbounded"
        )
    t = float(np.mean(diffs)) / (sd / math.sqrt(n))
    p = 2.0 * float(stdtr(n - 1, -abs(t)))
    p = min(max(p, config.P_VALUE_FLOOR), 1.0)
    return t, p


# ---------------------------------------------------------------------------
# Experiments.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Results of a repeated paired-split flip experiment.

    Serialization is deterministic: same inputs and seed give byte-identical
    JSON, text and CSV (no timestamps, no environment state).
    """

    model_names: Tuple[str, ...]
    num_pairs: int
    num_splits: int
    train_fraction: float
    seed: int
    mean_accuracy: Dict[str, float]
    std_accuracy: Dict[str, float]
    per_split: Dict[str, Tuple[float, ...]]
    t_tests: Dict[str, dict]

    def to_json(self) -> str:
        payload = {
            "models": list(self.model_names),
            "num_pairs": self.num_pairs,
            "num_splits": self.num_splits,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "per_split": {k: list(v) for k, v in self.per_split.items()},
            "t_tests": self.t_tests,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        width = max(len("model"), max((len(m) for m in self.model_names), default=0))
        lines = [
            f"flip experiment: {self.num_pairs} pairs, {self.num_splits} splits, "
            f"train fraction {self.train_fraction:g}, seed {self.seed}",
            "",
            f"{'model':<{width}}  {'mean':>8}  {'std':>8}",
        ]
        for name in self.model_names:
            lines.append(
                f"{name:<{width}}  {self.mean_accuracy[name]:8.4f}  {self.std_accuracy[name]:8.4f}"
            )
        if self.t_tests:
            lines.append("")
            for key in sorted(self.t_tests):
                entry = self.t_tests[key]
                a, b = key.split("|")
                if entry["degenerate"]:
                    lines.append(f"{a} vs {b}: degenerate (constant nonzero differences)")
                else:
                    lines.append(f"{a} vs {b}: t = {entry['t']:.4f}, p = {entry['p']:.3e}")
        return "\n".join(lines) + "\n"

    def splits_csv(self) -> str:
        header = "split," + ",".join(self.model_names)
        lines = [header]
        for s in range(self.num_splits):
            cells = [str(s)] + [repr(self.per_split[m][s]) for m in self.model_names]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _as_pairs(rows_or_pairs) -> List[FlipPair]:
    items = list(rows_or_pairs)
    if not items:
        raise SplitTooSmall("no data: neither rows nor flip pairs were provided")
    if isinstance(items[0], FlipPair):
        return items
    return mine_flip_pairs(items)


def run_experiment(
    rows_or_pairs,
    models: Sequence[Model],
    num_splits: int = config.DEFAULT_NUM_SPLITS,
    seed: int = 0,
    train_fraction: float = config.DEFAULT_TRAIN_FRACTION,
    threads: int = 1,
    on_split: Optional[Callable[[int, Dict[str, float]], None]] = None,
) -> ExperimentReport:
    """Repeated paired-split evaluation of several models on one dataset.

    Accepts either click-log rows (pairs are mined first) or pre-mined flip
    pairs. Every split re-fits every model on that split's training rows.
    Split seeds derive from ``seed``, so results do not depend on ``threads``
    or on the order models finish.
    """
    pairs = _as_pairs(rows_or_pairs)
    models = list(models)
    if not models:
        raise ValueError("at least one model is required")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValueError("model names must be unique")
    if num_splits < 1:
        raise ValueError("num_splits must be positive")

    def one_split(s: int) -> Dict[str, float]:
        split_seed = derive_seed(seed, f"split:{s}")
        train_rows, test_pairs = paired_split(pairs, train_fraction, split_seed)
        accs = {}
        for model in models:
            scorer = model.fit(train_rows)
            accs[model.name] = flip_accuracy(scorer, test_pairs)
        return accs

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            split_accs = list(pool.map(one_split, range(num_splits)))
    else:
        split_accs = [one_split(s) for s in range(num_splits)]
    if on_split is not None:
        for s, accs in enumerate(split_accs):
            on_split(s, accs)

    per_split = {name: tuple(accs[name] for accs in split_accs) for name in names}
    mean_accuracy = {name: float(np.mean(per_split[name])) for name in names}
    std_accuracy = {
        name: float(np.std(per_split[name], ddof=1)) if num_splits > 1 else 0.0
        for name in names
    }
    t_tests: Dict[str, dict] = {}
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            diffs = np.array(per_split[names[i]]) - np.array(per_split[names[j]])
            key = f"{names[i]}|{names[j]}"
            if diffs.size < 2:
                continue
            try:
                t, p = paired_t_test(diffs)
                t_tests[key] = {"t": t, "p": p, "degenerate": False}
            except DegenerateVariance:
                t_tests[key] = {"t": None, "p": None, "degenerate": True}
    return ExperimentReport(
        model_names=tuple(names),
        num_pairs=len(pairs),
        num_splits=num_splits,
        train_fraction=train_fraction,
        seed=seed,
        mean_accuracy=mean_accuracy,
        std_accuracy=std_accuracy,
        per_split=per_split,
        t_tests=t_tests,
    )


def run_lambda_sweep(
    rows_or_pairs,
    build_models: Callable[[float], Sequence[Model]],
    lambdas: Sequence[float],
    **kwargs,
) -> Dict[float, ExperimentReport]:
    """Run the same experiment at several restart rates.

    ``build_models(lam)`` must return the model list for that rate; results
    are keyed by the rate itself.
    """
    out: Dict[float, ExperimentReport] = {}
    for lam in lambdas:
        out[float(lam)] = run_experiment(rows_or_pairs, build_models(lam), **kwargs)
    return out

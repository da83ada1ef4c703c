"""Click-log rows, flip-pair mining, splits and synthetic data.

The on-disk format is a CSV with one line per (query, context, item):
``query_id, context_id, item_id, position, clicks`` followed by one column
per feature. Malformed lines are collected into an error report rather than
silently dropped. A JSON format carries pre-encoded training instances with
explicit topologies.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .baselines import FeatureRow
from .errors import ParseError, SchemaError, ShapeError, SplitTooSmall
from .learner import TrainingInstance
from .markov import StochasticMatrix, stationary
from .topology import (
    Direction,
    FeatureSpec,
    Normalization,
    Topology,
    WeightVector,
    combine,
    encode_rank_topology,
)

BASE_COLUMNS = ("query_id", "context_id", "item_id", "position", "clicks")


def derive_seed(base: int, label: str) -> int:
    """Stable 64-bit sub-seed for a named purpose under one base seed."""
    digest = hashlib.sha256(f"{base}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class DatasetSchema:
    """Ordered feature columns of a dataset."""

    features: Tuple[FeatureSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        for name in names:
            if name in BASE_COLUMNS:
                raise SchemaError(f"feature name {name!r} collides with a base column")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def k(self) -> int:
        return len(self.features)


@dataclass(frozen=True, eq=False)
class LogRow:
    """One displayed context: a query, its items, clicks and feature values."""

    query_id: str
    context_id: str
    items: tuple
    positions: np.ndarray
    clicks: np.ndarray
    features: Dict[str, np.ndarray]

    def __post_init__(self):
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        n = len(items)
        if n < 2:
            raise ValueError("a context needs at least two items")
        if len(set(items)) != n:
            raise ValueError("context items must be unique")
        positions = np.array(self.positions, dtype=np.int64)
        clicks = np.array(self.clicks, dtype=np.float64)
        if positions.shape != (n,) or clicks.shape != (n,):
            raise ShapeError("positions and clicks must have one entry per item")
        if np.any(clicks < 0):
            raise ValueError("clicks must be nonnegative")
        feats = {}
        for name, values in self.features.items():
            arr = np.array(values, dtype=np.float64)
            if arr.shape != (n,):
                raise ShapeError(f"feature {name!r} must have one value per item")
            arr.flags.writeable = False
            feats[name] = arr
        positions.flags.writeable = False
        clicks.flags.writeable = False
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "clicks", clicks)
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return len(self.items)

    def total_clicks(self) -> float:
        return float(self.clicks.sum())

    def ctrs(self) -> np.ndarray:
        """Within-context click-through rates (clicks normalized to sum 1)."""
        total = self.clicks.sum()
        if total <= 0:
            raise ValueError("ctrs are undefined for a context with no clicks")
        return self.clicks / total

    def index_of(self, item_id) -> int:
        return self.items.index(item_id)


@dataclass(frozen=True, eq=False)
class FlipPair:
    """Two contexts of one query in which items a and b swap preference.

    ``row_1`` is the context where a out-clicks b; in ``row_2`` b out-clicks
    a. ``strength`` is the summed absolute CTR gap across the two rows.
    """

    row_1: LogRow
    row_2: LogRow
    item_a: str
    item_b: str
    strength: float

    def __post_init__(self):
        if self.row_1.query_id != self.row_2.query_id:
            raise ValueError("a flip pair must come from a single query")
        for row in (self.row_1, self.row_2):
            if self.item_a not in row.items or self.item_b not in row.items:
                raise ValueError("both items must appear in both contexts")
        gap_1 = self.row_1.clicks[self.row_1.index_of(self.item_a)] - self.row_1.clicks[
            self.row_1.index_of(self.item_b)
        ]
        gap_2 = self.row_2.clicks[self.row_2.index_of(self.item_a)] - self.row_2.clicks[
            self.row_2.index_of(self.item_b)
        ]
        if not (gap_1 > 0 and gap_2 < 0):
            raise ValueError("row_1 must prefer item_a and row_2 must prefer item_b")


@dataclass(frozen=True)
class LoadError:
    """One rejected CSV line (or context) with its location."""

    line_number: int
    message: str


@dataclass(frozen=True, eq=False)
class LoadResult:
    rows: List[LogRow]
    errors: List[LoadError]


def load_csv(path, schema: DatasetSchema) -> LoadResult:
    """Parse a click-log CSV.

    Raises ``SchemaError`` if the header is missing required columns.
    Lines that fail to parse are reported in ``errors`` together with any
    context they leave incomplete; everything else is returned as rows,
    grouped by (query_id, context_id) in file order.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise SchemaError("file is empty; a header line is required")
        missing = [c for c in BASE_COLUMNS + schema.names if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        errors: List[LoadError] = []
        contexts: Dict[Tuple[str, str], dict] = {}
        order: List[Tuple[str, str]] = []
        for record in reader:
            line = reader.line_num
            try:
                parsed = _parse_line(record, schema, line)
            except ParseError as exc:
                errors.append(LoadError(line_number=line, message=str(exc)))
                key = (record.get("query_id") or "", record.get("context_id") or "")
                ctx = contexts.get(key)
                if ctx is not None:
                    ctx["broken"] = True
                else:
                    contexts[key] = {"broken": True, "lines": [], "first_line": line}
                    order.append(key)
                continue
            key = (parsed["query_id"], parsed["context_id"])
            ctx = contexts.get(key)
            if ctx is None:
                ctx = contexts[key] = {"broken": False, "lines": [], "first_line": line}
                order.append(key)
            ctx["lines"].append(parsed)
        rows: List[LogRow] = []
        for key in order:
            ctx = contexts[key]
            if ctx["broken"]:
                continue
            lines = ctx["lines"]
            if len(lines) < 2:
                errors.append(
                    LoadError(
                        line_number=ctx["first_line"],
                        message=f"context {key[1]!r} of query {key[0]!r} has fewer than two items",
                    )
                )
                continue
            try:
                rows.append(
                    LogRow(
                        query_id=key[0],
                        context_id=key[1],
                        items=tuple(ln["item_id"] for ln in lines),
                        positions=[ln["position"] for ln in lines],
                        clicks=[ln["clicks"] for ln in lines],
                        features={
                            name: [ln["features"][name] for ln in lines]
                            for name in schema.names
                        },
                    )
                )
            except (ValueError, ShapeError) as exc:
                errors.append(LoadError(line_number=ctx["first_line"], message=str(exc)))
    return LoadResult(rows=rows, errors=errors)


def _parse_line(record: dict, schema: DatasetSchema, line: int) -> dict:
    for column in BASE_COLUMNS + schema.names:
        value = record.get(column)
        if value is None or value == "":
            raise ParseError(f"line {line}: empty {column!r} cell", line_number=line)
    try:
        position = int(record["position"])
    except ValueError as exc:
        raise ParseError(f"line {line}: non-integer position {record['position']!r}", line) from exc
    try:
        clicks = float(record["clicks"])
    except ValueError as exc:
        raise ParseError(f"line {line}: non-numeric clicks {record['clicks']!r}", line) from exc
    features = {}
    for name in schema.names:
        try:
            features[name] = float(record[name])
        except ValueError as exc:
            raise ParseError(
                f"line {line}: non-numeric value {record[name]!r} in feature {name!r}", line
            ) from exc
    return {
        "query_id": record["query_id"],
        "context_id": record["context_id"],
        "item_id": record["item_id"],
        "position": position,
        "clicks": clicks,
        "features": features,
    }


def save_csv(rows: Sequence[LogRow], path, schema: DatasetSchema) -> None:
    """Write rows in the load_csv format (UTF-8, header line first)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(BASE_COLUMNS + schema.names)
        for row in rows:
            for i, item in enumerate(row.items):
                clicks = row.clicks[i]
                clicks_cell = int(clicks) if float(clicks).is_integer() else clicks
                writer.writerow(
                    [row.query_id, row.context_id, item, int(row.positions[i]), clicks_cell]
                    + [repr(float(row.features[name][i])) for name in schema.names]
                )


# ---------------------------------------------------------------------------
# Flip mining and splitting.
# ---------------------------------------------------------------------------


def mine_flip_pairs(
    rows: Sequence[LogRow],
    min_total_clicks: float = config.MIN_TOTAL_CLICKS,
    min_click_diff: float = config.MIN_CLICK_DIFF,
) -> List[FlipPair]:
    """Find item pairs whose click preference reverses across contexts.

    A context qualifies for a pair (a, b) if its total clicks are strictly
    above ``min_total_clicks`` and the click gap between a and b is at least
    ``min_click_diff``. When several qualifying contexts exist on a side,
    the one with the largest CTR gap is chosen (ties by context id). Output
    is sorted by (query, item_a, item_b); item_a precedes item_b
    lexicographically and row_1 is the context preferring item_a.
    """
    by_query: Dict[str, List[LogRow]] = {}
    for row in rows:
        by_query.setdefault(row.query_id, []).append(row)
    pairs: List[FlipPair] = []
    for query in sorted(by_query):
        qrows = [r for r in by_query[query] if r.total_clicks() > min_total_clicks]
        seen: Dict[Tuple[str, str], List[Tuple[LogRow, float, float]]] = {}
        for row in qrows:
            ctr = row.ctrs()
            for i in range(row.n):
                for j in range(i + 1, row.n):
                    a, b = sorted((row.items[i], row.items[j]))
                    ia, ib = row.index_of(a), row.index_of(b)
                    if abs(row.clicks[ia] - row.clicks[ib]) < min_click_diff:
                        continue
                    seen.setdefault((a, b), []).append(
                        (row, float(row.clicks[ia] - row.clicks[ib]), float(abs(ctr[ia] - ctr[ib])))
                    )
            # sorted (a, b) keeps pair naming deterministic across contexts
        for (a, b), entries in sorted(seen.items()):
            prefer_a = [(row, gap) for row, diff, gap in entries if diff > 0]
            prefer_b = [(row, gap) for row, diff, gap in entries if diff < 0]
            if not prefer_a or not prefer_b:
                continue
            row_1, gap_1 = max(prefer_a, key=lambda e: (e[1], e[0].context_id))
            row_2, gap_2 = max(prefer_b, key=lambda e: (e[1], e[0].context_id))
            pairs.append(
                FlipPair(row_1=row_1, row_2=row_2, item_a=a, item_b=b, strength=gap_1 + gap_2)
            )
    return pairs


def _row_key(row: LogRow) -> Tuple[str, str]:
    return (row.query_id, row.context_id)


def paired_split(
    pairs: Sequence[FlipPair],
    train_fraction: float = config.DEFAULT_TRAIN_FRACTION,
    seed: int = 0,
) -> Tuple[List[LogRow], List[FlipPair]]:
    """Split flip pairs into training rows and test pairs.

    A pair's two rows always land on the same side, and no row appears on
    both sides: pairs sharing a row are clustered first and clusters are
    assigned whole. The split is deterministic in (pairs, seed) and
    insensitive to input order. Returns ``(train_rows, test_pairs)``.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise SplitTooSmall(f"need at least two flip pairs, got {len(pairs)}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    indexed = sorted(
        range(len(pairs)),
        key=lambda i: (
            pairs[i].row_1.query_id,
            pairs[i].item_a,
            pairs[i].item_b,
            pairs[i].row_1.context_id,
            pairs[i].row_2.context_id,
        ),
    )
    parent = list(range(len(pairs)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: Dict[Tuple[str, str], int] = {}
    for i in indexed:
        for row in (pairs[i].row_1, pairs[i].row_2):
            key = _row_key(row)
            if key in owner:
                ra, rb = find(owner[key]), find(i)
                if ra != rb:
                    parent[rb] = ra
            else:
                owner[key] = i
    clusters: Dict[int, List[int]] = {}
    cluster_order: List[int] = []
    for i in indexed:
        root = find(i)
        if root not in clusters:
            clusters[root] = []
            cluster_order.append(root)
        clusters[root].append(i)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(cluster_order))
    target = int(round(train_fraction * len(pairs)))
    target = min(max(target, 1), len(pairs) - 1)
    train_idx: List[int] = []
    test_idx: List[int] = []
    count = 0
    for pos in perm:
        members = clusters[cluster_order[pos]]
        if count < target:
            train_idx.extend(members)
            count += len(members)
        else:
            test_idx.extend(members)
    if not test_idx:
        raise SplitTooSmall("pairs are too entangled to produce a nonempty test set")
    train_rows: List[LogRow] = []
    seen_rows = set()
    for i in train_idx:
        for row in (pairs[i].row_1, pairs[i].row_2):
            key = _row_key(row)
            if key not in seen_rows:
                seen_rows.add(key)
                train_rows.append(row)
    return train_rows, [pairs[i] for i in sorted(test_idx)]


# ---------------------------------------------------------------------------
# Bridges to the learner and the baselines.
# ---------------------------------------------------------------------------


def topologies_from_row(row: LogRow, schema: DatasetSchema) -> Tuple[Topology, ...]:
    """Rank-encode every schema feature of one context."""
    return tuple(
        encode_rank_topology(
            row.features[spec.name],
            direction=spec.direction,
            item_ids=row.items,
            feature=spec.name,
        )
        for spec in schema.features
    )


def training_instances_from_rows(
    rows: Sequence[LogRow], schema: DatasetSchema
) -> List[TrainingInstance]:
    """One instance per (context, item) with the within-context CTR as target.

    Contexts without any clicks are skipped; their targets are undefined.
    """
    instances: List[TrainingInstance] = []
    for row in rows:
        if row.total_clicks() <= 0:
            continue
        ctr = row.ctrs()
        topologies = topologies_from_row(row, schema)
        for u in range(row.n):
            instances.append(
                TrainingInstance(
                    query_id=row.query_id,
                    item_ids=row.items,
                    topologies=topologies,
                    target_index=u,
                    target_prob=float(ctr[u]),
                )
            )
    return instances


def feature_rows_from_logs(
    rows: Sequence[LogRow], schema: DatasetSchema, include_position: bool = True
) -> List[FeatureRow]:
    """Flatten contexts into per-item rows for the score-based baselines.

    The display position is appended as the last feature when
    ``include_position`` is set. Contexts without clicks are skipped.
    """
    out: List[FeatureRow] = []
    for row in rows:
        if row.total_clicks() <= 0:
            continue
        ctr = row.ctrs()
        for i, item in enumerate(row.items):
            values = [row.features[name][i] for name in schema.names]
            if include_position:
                values.append(float(row.positions[i]))
            out.append(
                FeatureRow(
                    query_id=row.query_id,
                    item_id=item,
                    features=np.array(values),
                    ctr=float(ctr[i]),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Synthetic data.
# ---------------------------------------------------------------------------


def synthetic_schema(k: int) -> DatasetSchema:
    """Schema of the synthetic generators: features f0..f{k-1}, higher better."""
    return DatasetSchema(
        features=tuple(FeatureSpec(name=f"f{i}", direction=Direction.HIGHER_IS_BETTER) for i in range(k))
    )


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """Parameters of the basic synthetic generator.

    ``clicks_per_context`` of None produces noise-free targets only;
    an integer draws that many multinomial clicks per context and also
    materializes click-log rows.
    """

    k: int
    num_queries: int
    weights: WeightVector
    n: int = 5
    lam: float = config.DEFAULT_LAMBDA
    clicks_per_context: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.n < 2 or self.num_queries < 1:
            raise ValueError("k, n and num_queries must be positive (n at least 2)")
        if self.weights.normalization is not Normalization.SUMS_TO_ONE:
            raise ValueError("spec weights must be in reporting form")
        if self.weights.k != self.k:
            raise ShapeError("weights length must equal k")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if self.clicks_per_context is not None and self.clicks_per_context < 1:
            raise ValueError("clicks_per_context must be positive when given")


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    instances: List[TrainingInstance]
    rows: List[LogRow]
    schema: DatasetSchema


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Draw random contexts and label items with their true stationary mass.

    Per query: n items with k independent Uniform(0, 1) feature values, one
    rank topology per feature, and one instance per item whose target is the
    stationary probability under the requested weights. With multinomial
    noise enabled, click-log rows are produced alongside.
    """
    rng = np.random.default_rng(spec.seed)
    schema = synthetic_schema(spec.k)
    instances: List[TrainingInstance] = []
    rows: List[LogRow] = []
    for q in range(spec.num_queries):
        query_id = f"q{q:05d}"
        items = tuple(f"{query_id}_i{j}" for j in range(spec.n))
        values = rng.random((spec.k, spec.n))
        topologies = tuple(
            encode_rank_topology(values[i], Direction.HIGHER_IS_BETTER, items, schema.names[i])
            for i in range(spec.k)
        )
        probs = stationary(combine(topologies, spec.weights, spec.lam)).probs
        for u in range(spec.n):
            instances.append(
                TrainingInstance(
                    query_id=query_id,
                    item_ids=items,
                    topologies=topologies,
                    target_index=u,
                    target_prob=float(probs[u]),
                )
            )
        if spec.clicks_per_context is not None:
            clicks = rng.multinomial(spec.clicks_per_context, probs)
            rows.append(
                LogRow(
                    query_id=query_id,
                    context_id=f"c{q:05d}",
                    items=items,
                    positions=np.arange(1, spec.n + 1),
                    clicks=clicks,
                    features={schema.names[i]: values[i] for i in range(spec.k)},
                )
            )
    return SyntheticDataset(instances=instances, rows=rows, schema=schema)


def generate_flip_dataset(
    num_queries: int,
    weights: WeightVector,
    lam: float = config.DEFAULT_LAMBDA,
    n: int = 5,
    shared_items: int = 2,
    clicks_per_context: int = 10_000,
    margin: float = 0.02,
    seed: int = 0,
    max_attempts: int = 500,
) -> SyntheticDataset:
    """Synthesize click logs rich in genuine preference flips.

    Each query gets two contexts sharing ``shared_items`` items (the first
    two are the flip candidates a and b) with the remaining slots filled by
    different decoys. Feature values are redrawn until the true stationary
    preference between a and b reverses across the two contexts with at
    least ``margin`` separation on both sides, so multinomial noise at
    ``clicks_per_context`` cannot wash the flip out. Display order is
    shuffled per context; positions carry no signal.
    """
    if not 2 <= shared_items < n:
        raise ValueError("shared_items must be at least 2 and below n")
    k = weights.k
    rng = np.random.default_rng(seed)
    schema = synthetic_schema(k)
    instances: List[TrainingInstance] = []
    rows: List[LogRow] = []
    pool_size = 2 * n - shared_items
    for q in range(num_queries):
        query_id = f"q{q:05d}"
        pool_items = tuple(f"{query_id}_i{j}" for j in range(pool_size))
        idx_1 = list(range(n))
        idx_2 = list(range(shared_items)) + list(range(n, pool_size))
        accepted = None
        for _ in range(max_attempts):
            values = rng.random((k, pool_size))
            result = []
            for idx in (idx_1, idx_2):
                items = tuple(pool_items[j] for j in idx)
                subvals = values[:, idx]
                topologies = tuple(
                    encode_rank_topology(subvals[i], Direction.HIGHER_IS_BETTER, items, schema.names[i])
                    for i in range(k)
                )
                probs = stationary(combine(topologies, weights, lam)).probs
                result.append((items, subvals, topologies, probs))
            gap_1 = result[0][3][0] - result[0][3][1]
            gap_2 = result[1][3][0] - result[1][3][1]
            if gap_1 * gap_2 < 0 and min(abs(gap_1), abs(gap_2)) >= margin:
                accepted = result
                break
        if accepted is None:
            continue
        for c, (items, subvals, topologies, probs) in enumerate(accepted):
            clicks = rng.multinomial(clicks_per_context, probs)
            positions = rng.permutation(n) + 1
            rows.append(
                LogRow(
                    query_id=query_id,
                    context_id=f"c{q:05d}_{c}",
                    items=items,
                    positions=positions,
                    clicks=clicks,
                    features={schema.names[i]: subvals[i] for i in range(k)},
                )
            )
            for u in range(n):
                instances.append(
                    TrainingInstance(
                        query_id=query_id,
                        item_ids=items,
                        topologies=topologies,
                        target_index=u,
                        target_prob=float(probs[u]),
                    )
                )
    return SyntheticDataset(instances=instances, rows=rows, schema=schema)


# ---------------------------------------------------------------------------
# JSON instance files (pre-encoded topologies).
# ---------------------------------------------------------------------------


def save_instances(instances: Sequence[TrainingInstance], path) -> None:
    """Write training instances with explicit topology matrices as JSON."""
    payload = []
    for inst in instances:
        payload.append(
            {
                "query_id": inst.query_id,
                "items": list(inst.item_ids),
                "target_index": inst.target_index,
                "target_prob": inst.target_prob,
                "topologies": [
                    {"feature": top.feature, "matrix": top.matrix.entries.tolist()}
                    for top in inst.topologies
                ],
            }
        )
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"instances": payload}, handle, indent=1, sort_keys=True)
        handle.write("\n")


def load_instances(path) -> List[TrainingInstance]:
    """Read a JSON instance file written by :func:`save_instances`.

    Topology tuples are shared between instances of the same context so the
    learner can group them.
    """
    with open(path, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", line_number=exc.lineno) from exc
    if not isinstance(payload, dict) or "instances" not in payload:
        raise SchemaError("instance file must be an object with an 'instances' array")
    cache: Dict[str, Tuple] = {}
    out: List[TrainingInstance] = []
    for i, entry in enumerate(payload["instances"]):
        try:
            items = tuple(entry["items"])
            key = json.dumps([entry["query_id"], list(items)] + [t["matrix"] for t in entry["topologies"]])
            topologies = cache.get(key)
            if topologies is None:
                topologies = tuple(
                    Topology(
                        feature=t["feature"],
                        matrix=StochasticMatrix(np.array(t["matrix"], dtype=np.float64)),
                        item_ids=items,
                    )
                    for t in entry["topologies"]
                )
                cache[key] = topologies
            out.append(
                TrainingInstance(
                    query_id=entry["query_id"],
                    item_ids=items,
                    topologies=topologies,
                    target_index=int(entry["target_index"]),
                    target_prob=float(entry["target_prob"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"instance {i} is malformed: {exc}") from exc
    return out

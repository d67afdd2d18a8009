"""Experiment logs: ingestion, discretization and chronological splitting.

A dataset is stored column-wise (numpy arrays) and treated as immutable once
built. ``Instance`` objects are materialised on demand for callers that want
row-wise access.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterator, Mapping, Sequence, Union

import numpy as np

from .errors import (
    ConfigInvalid,
    DegenerateFeatureWarning,
    DimensionMismatch,
    EmptyArm,
    EmptySplit,
    MissingColumn,
    NonFiniteMetric,
    UnparsableRow,
)

_ARM_TOKENS = {"t": True, "test": True, "c": False, "control": False}


@dataclass(frozen=True)
class Instance:
    id: str
    timestamp: int
    is_test: bool
    metric: float
    context: tuple

    @property
    def arm(self) -> str:
        return "T" if self.is_test else "C"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ExperimentDataset:
    """Randomized-experiment log, sorted by timestamp.

    ``X`` has shape ``(n, F)``; ``is_test`` marks the intervention arm.
    """

    ids: tuple
    timestamps: np.ndarray
    is_test: np.ndarray
    metric: np.ndarray
    X: np.ndarray
    feature_names: tuple
    feature_levels: tuple = field(default=())

    def __post_init__(self):
        n = len(self.ids)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != n:
            raise DimensionMismatch(f"X has shape {X.shape}, expected ({n}, F)")
        if X.shape[1] < 1:
            raise DimensionMismatch("datasets need at least one feature")
        if len(self.feature_names) != X.shape[1]:
            raise DimensionMismatch("feature_names length differs from F")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype=np.int64)))
        object.__setattr__(self, "is_test", _frozen(np.asarray(self.is_test, dtype=bool)))
        y = np.asarray(self.metric, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise NonFiniteMetric("metric values must be finite")
        object.__setattr__(self, "metric", _frozen(y))
        if not self.feature_levels:
            levels = tuple(tuple(np.unique(X[:, j]).tolist()) for j in range(X.shape[1]))
            object.__setattr__(self, "feature_levels", levels)
        if n and (not self.is_test.any() or self.is_test.all()):
            raise EmptyArm("both the test and the control arm need at least one instance")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def F(self) -> int:
        return self.X.shape[1]

    @property
    def n_test(self) -> int:
        return int(self.is_test.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_test

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Instance]:
        for i in range(self.n):
            yield self.instance(i)

    def instance(self, i: int) -> Instance:
        return Instance(
            self.ids[i],
            int(self.timestamps[i]),
            bool(self.is_test[i]),
            float(self.metric[i]),
            tuple(self.X[i].tolist()),
        )

    @property
    def instances(self) -> list:
        return list(self)

    def take(self, idx) -> "ExperimentDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return ExperimentDataset(
            ids=tuple(self.ids[i] for i in idx),
            timestamps=self.timestamps[idx],
            is_test=self.is_test[idx],
            metric=self.metric[idx],
            X=self.X[idx],
            feature_names=self.feature_names,
        )

    def with_metric(self, metric) -> "ExperimentDataset":
        return ExperimentDataset(
            self.ids, self.timestamps, self.is_test, metric, self.X, self.feature_names
        )

    def equals(self, other: "ExperimentDataset") -> bool:
        """Bit-exact comparison of every field."""
        return (
            self.ids == other.ids
            and self.feature_names == other.feature_names
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.is_test, other.is_test)
            and self.metric.tobytes() == other.metric.tobytes()
            and self.X.tobytes() == other.X.tobytes()
        )

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "feature_levels": [list(lv) for lv in self.feature_levels],
            "instances": [
                {
                    "id": self.ids[i],
                    "ts": int(self.timestamps[i]),
                    "arm": "T" if self.is_test[i] else "C",
                    "y": float(self.metric[i]),
                    "x": self.X[i].tolist(),
                }
                for i in range(self.n)
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentDataset":
        rows = d["instances"]
        names = tuple(d["feature_names"])
        return cls(
            ids=tuple(r["id"] for r in rows),
            timestamps=[r["ts"] for r in rows],
            is_test=[r["arm"] == "T" for r in rows],
            metric=[r["y"] for r in rows],
            X=np.array([r["x"] for r in rows], dtype=np.float64).reshape(len(rows), len(names)),
            feature_names=names,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentDataset":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class Schema:
    """Column-name mapping for CSV input. ``features=None`` means every
    remaining column, in header order."""

    id: str = "id"
    timestamp: str = "ts"
    arm: str = "arm"
    metric: str = "y"
    features: Union[tuple, None] = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        known = {"id", "timestamp", "arm", "metric", "features"}
        extra = set(d) - known
        if extra:
            raise ConfigInvalid(f"schema.{sorted(extra)[0]}", "unknown key")
        feats = d.get("features")
        return cls(
            id=d.get("id", "id"),
            timestamp=d.get("timestamp", "ts"),
            arm=d.get("arm", "arm"),
            metric=d.get("metric", "y"),
            features=None if feats is None else tuple(feats),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "timestamp": self.timestamp,
            "arm": self.arm,
            "metric": self.metric,
            "features": None if self.features is None else list(self.features),
        }


def _text_stream(stream) -> IO[str]:
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(stream.decode("utf-8"))
    if isinstance(stream, io.TextIOBase):
        return stream
    if hasattr(stream, "read") and "b" in getattr(stream, "mode", "b"):
        return io.TextIOWrapper(stream, encoding="utf-8", newline="")
    return stream


def ingest_csv(stream, schema: Schema = Schema()) -> ExperimentDataset:
    """Parse a CSV experiment log into a timestamp-sorted dataset.

    Rows with equal timestamps keep their input order.
    """
    reader = csv.reader(_text_stream(stream))
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumn("empty input: no header row") from None
    header = [h.strip() for h in header]
    pos = {name: i for i, name in enumerate(header)}
    fixed = [schema.id, schema.timestamp, schema.arm, schema.metric]
    for name in fixed:
        if name not in pos:
            raise MissingColumn(f"column {name!r} not found in header")
    if schema.features is None:
        feature_names = tuple(h for h in header if h not in fixed)
    else:
        feature_names = tuple(schema.features)
        for name in feature_names:
            if name not in pos:
                raise MissingColumn(f"feature column {name!r} not found in header")
    if not feature_names:
        raise MissingColumn("no feature columns")
    fcols = [pos[f] for f in feature_names]
    i_id, i_ts, i_arm, i_y = (pos[c] for c in fixed)

    ids, ts, arms, ys, rows = [], [], [], [], []
    for line, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise UnparsableRow(line, f"expected {len(header)} fields, got {len(rec)}")
        try:
            t = int(rec[i_ts])
        except ValueError:
            raise UnparsableRow(line, f"bad timestamp {rec[i_ts]!r}") from None
        arm = _ARM_TOKENS.get(rec[i_arm].strip().lower())
        if arm is None:
            raise UnparsableRow(line, f"bad arm label {rec[i_arm]!r}")
        try:
            y = float(rec[i_y])
            x = [float(rec[c]) for c in fcols]
        except ValueError as exc:
            raise UnparsableRow(line, str(exc)) from None
        if not math.isfinite(y):
            raise NonFiniteMetric(f"line {line}: metric {rec[i_y]!r} is not finite")
        if not all(math.isfinite(v) for v in x):
            raise UnparsableRow(line, "non-finite feature value")
        ids.append(rec[i_id])
        ts.append(t)
        arms.append(arm)
        ys.append(y)
        rows.append(x)

    arms_a = np.array(arms, dtype=bool)
    if not arms_a.any() or arms_a.all():
        raise EmptyArm("input needs at least one test row and one control row")
    ts_a = np.array(ts, dtype=np.int64)
    order = np.argsort(ts_a, kind="stable")
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_names))
    return ExperimentDataset(
        ids=tuple(ids[i] for i in order),
        timestamps=ts_a[order],
        is_test=arms_a[order],
        metric=np.array(ys, dtype=np.float64)[order],
        X=X[order],
        feature_names=feature_names,
    )


def write_csv(dataset: ExperimentDataset, stream: IO[str]) -> None:
    """Emit ``dataset`` in the default schema; floats use shortest round-trip repr."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["id", "ts", "arm", "y", *dataset.feature_names])
    for i in range(dataset.n):
        w.writerow(
            [
                dataset.ids[i],
                int(dataset.timestamps[i]),
                "T" if dataset.is_test[i] else "C",
                repr(float(dataset.metric[i])),
                *(repr(float(v)) for v in dataset.X[i]),
            ]
        )


# --------------------------------------------------------------------------
# discretization


@dataclass(frozen=True)
class Passthrough:
    pass


@dataclass(frozen=True)
class EqualWidthBins:
    count: int


@dataclass(frozen=True)
class QuantileBins:
    count: int


@dataclass(frozen=True)
class MergeBelowCount:
    min_count: int


Rule = Union[Passthrough, EqualWidthBins, QuantileBins, MergeBelowCount]


@dataclass(frozen=True)
class DiscretizationConfig:
    """Per-feature rules keyed by feature name or index; unlisted features
    use ``default``."""

    rules: Mapping = field(default_factory=dict)
    default: Rule = Passthrough()

    def __post_init__(self):
        for key, rule in list(self.rules.items()) + [("default", self.default)]:
            _check_rule(rule, f"discretization.{key}")

    def rule_for(self, j: int, name: str) -> Rule:
        if name in self.rules:
            return self.rules[name]
        return self.rules.get(j, self.default)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiscretizationConfig":
        extra = set(d) - {"default", "features"}
        if extra:
            raise ConfigInvalid(f"discretization.{sorted(extra)[0]}", "unknown key")
        default = rule_from_dict(d.get("default", {"rule": "passthrough"}), "discretization.default")
        rules = {
            k: rule_from_dict(v, f"discretization.features.{k}")
            for k, v in d.get("features", {}).items()
        }
        return cls(rules=rules, default=default)

    def to_dict(self) -> dict:
        return {
            "default": rule_to_dict(self.default),
            "features": {str(k): rule_to_dict(v) for k, v in self.rules.items()},
        }


def _check_rule(rule, where: str) -> None:
    if isinstance(rule, (EqualWidthBins, QuantileBins)) and rule.count < 1:
        raise ConfigInvalid(where, "bin count must be >= 1")
    if isinstance(rule, MergeBelowCount) and rule.min_count < 1:
        raise ConfigInvalid(where, "min_count must be >= 1")
    if not isinstance(rule, (Passthrough, EqualWidthBins, QuantileBins, MergeBelowCount)):
        raise ConfigInvalid(where, f"unknown rule {rule!r}")


_RULE_NAMES = {
    "passthrough": Passthrough,
    "equal_width": EqualWidthBins,
    "quantile": QuantileBins,
    "merge_below_count": MergeBelowCount,
}


def rule_from_dict(d: Mapping, where: str) -> Rule:
    kind = d.get("rule")
    if kind not in _RULE_NAMES:
        raise ConfigInvalid(where, f"unknown rule {kind!r}")
    extra = set(d) - {"rule", "count", "min_count"}
    if extra:
        raise ConfigInvalid(f"{where}.{sorted(extra)[0]}", "unknown key")
    try:
        if kind == "passthrough":
            return Passthrough()
        if kind == "merge_below_count":
            return MergeBelowCount(int(d["min_count"]))
        return _RULE_NAMES[kind](int(d["count"]))
    except KeyError as exc:
        raise ConfigInvalid(f"{where}.{exc.args[0]}", "missing") from None


def rule_to_dict(rule: Rule) -> dict:
    if isinstance(rule, Passthrough):
        return {"rule": "passthrough"}
    if isinstance(rule, MergeBelowCount):
        return {"rule": "merge_below_count", "min_count": rule.min_count}
    name = "equal_width" if isinstance(rule, EqualWidthBins) else "quantile"
    return {"rule": name, "count": rule.count}


def _bin_to_edges(col: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(edges, col, side="right") - 1
    return edges[np.clip(idx, 0, len(edges) - 1)]


def discretize_column(col: np.ndarray, rule: Rule, name: str = "") -> np.ndarray:
    """Map one feature column onto its bin representatives (bin lower edges)."""
    if isinstance(rule, Passthrough):
        return col
    lo, hi = float(col.min()), float(col.max())
    if isinstance(rule, (EqualWidthBins, QuantileBins)) and lo == hi:
        if rule.count > 1:
            warnings.warn(
                f"feature {name!r} is constant; kept as a single level",
                DegenerateFeatureWarning,
                stacklevel=3,
            )
        return col.copy()
    if isinstance(rule, EqualWidthBins):
        width = (hi - lo) / rule.count
        idx = np.minimum(np.floor((col - lo) / width), rule.count - 1).astype(np.int64)
        return lo + idx * width
    if isinstance(rule, QuantileBins):
        edges = np.unique(np.quantile(col, np.arange(rule.count) / rule.count))
        return _bin_to_edges(col, edges)
    # MergeBelowCount: sweep distinct values upward, closing a bin once it holds
    # min_count rows; a short trailing bin is folded into its predecessor.
    values, counts = np.unique(col, return_counts=True)
    edges, acc = [], 0
    for v, c in zip(values, counts):
        if acc == 0:
            edges.append(v)
        acc += c
        if acc >= rule.min_count:
            acc = 0
    if acc and len(edges) > 1:
        edges.pop()
    return _bin_to_edges(col, np.array(edges))


def discretize(dataset: ExperimentDataset, config: DiscretizationConfig) -> ExperimentDataset:
    if dataset.n == 0:
        raise EmptySplit("cannot discretize an empty dataset")
    X = dataset.X.copy()
    for j, name in enumerate(dataset.feature_names):
        X[:, j] = discretize_column(dataset.X[:, j], config.rule_for(j, name), name)
    return ExperimentDataset(
        dataset.ids, dataset.timestamps, dataset.is_test, dataset.metric, X, dataset.feature_names
    )


def chronological_split(dataset: ExperimentDataset, train_fraction: float):
    """First ``ceil(train_fraction * n)`` instances train, the rest test.

    A side that ends up holding only one arm raises ``EmptyArm``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigInvalid("train_fraction", "must lie strictly between 0 and 1")
    n_train = math.ceil(train_fraction * dataset.n)
    if n_train <= 0 or n_train >= dataset.n:
        raise EmptySplit(f"split of {dataset.n} instances at {train_fraction} leaves one side empty")
    idx = np.arange(dataset.n)
    return dataset.take(idx[:n_train]), dataset.take(idx[n_train:])


def stack_contexts(rows: Sequence[Sequence[float]], F: int) -> np.ndarray:
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != F:
        raise DimensionMismatch(f"context has {X.shape[1]} features, model expects {F}")
    return X

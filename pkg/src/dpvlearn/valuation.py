"""Subpopulations induced by representations, and the derived personal
valuation (DPV) of a context.

Membership is decided on a fixed grid: an instance belongs to ``{H x = v}``
when every coordinate of ``H x`` rounds to the same multiple of
``quantization`` as ``v``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .data import ExperimentDataset, stack_contexts
from .errors import DimensionMismatch
from .search import Representation
from .stats import ArmStats, EligibilityConfig, is_eligible, standard_error, statistic_from_difference

DEFAULT_QUANTIZATION = 1e-6


def grid_keys(X: np.ndarray, H: np.ndarray, quantization: float) -> np.ndarray:
    """Integer grid coordinates of ``H x`` for each row of ``X``.

    The per-row reduction does not depend on how many rows are passed, so a
    context gets the same key alone or in a batch.
    """
    proj = (X[:, None, :] * H[None, :, :]).sum(axis=-1)
    return np.rint(proj / quantization).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Subpopulation:
    rep_index: int
    key: tuple
    v: tuple
    member_ids: frozenset
    stats_test: ArmStats
    stats_control: ArmStats
    effect: float
    volatility: float
    eligible: bool = False

    @property
    def size(self) -> int:
        return self.stats_test.n + self.stats_control.n

    def to_dict(self) -> dict:
        t, c = self.stats_test, self.stats_control
        return {
            "rep_index": self.rep_index,
            "v": list(self.v),
            "n_T": t.n,
            "n_C": c.n,
            "mean_T": t.mean,
            "mean_C": c.mean,
            "var_T": t.var,
            "var_C": c.var,
            "effect": self.effect,
            "volatility": self.volatility,
        }

    @classmethod
    def from_dict(cls, d: dict, quantization: float) -> "Subpopulation":
        v = tuple(float(x) for x in d["v"])
        return cls(
            rep_index=int(d["rep_index"]),
            key=tuple(int(k) for k in np.rint(np.array(v) / quantization).astype(np.int64)),
            v=v,
            member_ids=frozenset(),
            stats_test=ArmStats(int(d["n_T"]), float(d["mean_T"]), float(d["var_T"])),
            stats_control=ArmStats(int(d["n_C"]), float(d["mean_C"]), float(d["var_C"])),
            effect=float(d["effect"]),
            volatility=float(d["volatility"]),
            eligible=True,
        )


def _make_subpop(rep_index, key, quantization, ids, y_t, y_c) -> Subpopulation:
    st, sc = ArmStats.of(y_t), ArmStats.of(y_c)
    effect = st.mean - sc.mean if st.n >= 1 and sc.n >= 1 else math.nan
    vol = standard_error(st, sc) if st.n >= 2 and sc.n >= 2 else math.nan
    return Subpopulation(
        rep_index=rep_index,
        key=key,
        v=tuple(k * quantization for k in key),
        member_ids=frozenset(ids),
        stats_test=st,
        stats_control=sc,
        effect=effect,
        volatility=vol,
    )


def enumerate_subpopulations(
    H, dataset: ExperimentDataset, quantization: float = DEFAULT_QUANTIZATION, rep_index: int = 0
) -> list:
    """Group ``dataset`` by the grid key of ``H x``; groups come out in
    lexicographic key order and partition the dataset."""
    if quantization <= 0:
        raise ValueError("quantization must be > 0")
    Hm = H.H if isinstance(H, Representation) else np.atleast_2d(np.asarray(H, dtype=np.float64))
    if Hm.shape[1] != dataset.F:
        raise DimensionMismatch(f"H has {Hm.shape[1]} columns, dataset has F={dataset.F}")
    keys = grid_keys(dataset.X, Hm, quantization)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    ids = dataset.ids
    out = []
    for g in range(len(uniq)):
        members = order[bounds[g] : bounds[g + 1]]
        arm = dataset.is_test[members]
        y = dataset.metric[members]
        out.append(
            _make_subpop(
                rep_index,
                tuple(int(k) for k in uniq[g]),
                quantization,
                (ids[i] for i in members),
                y[arm],
                y[~arm],
            )
        )
    return out


def filter_eligible(groups: Sequence[Subpopulation], cfg: EligibilityConfig) -> list:
    return [replace(g, eligible=True) for g in groups if is_eligible(g.stats_test, g.stats_control, cfg)]


def dedupe(subpops: Sequence[Subpopulation]) -> list:
    """Drop repeated membership sets, keeping the earliest discovered copy."""
    seen = set()
    out = []
    for s in sorted(subpops, key=lambda s: s.rep_index):
        if s.member_ids in seen:
            continue
        seen.add(s.member_ids)
        out.append(s)
    return out


@dataclass(frozen=True, eq=False)
class EligibleSet:
    """The scoring model: accepted representations plus eligible subpopulations."""

    subpops: tuple
    representations: tuple
    quantization: float = DEFAULT_QUANTIZATION
    level: float = 0.30
    var_floor: float = 1e-12
    F: Optional[int] = None
    objectives: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "subpops", tuple(self.subpops))
        object.__setattr__(self, "objectives", tuple(int(o) for o in self.objectives))
        object.__setattr__(self, "representations", tuple(self.representations))
        if self.F is None:
            F = self.representations[0].F if self.representations else None
            object.__setattr__(self, "F", F)
        # rep_index -> {grid key -> subpop}
        index: dict = {}
        for s in self.subpops:
            index.setdefault(s.rep_index, {})[s.key] = s
        object.__setattr__(self, "_index", index)

    def weight_precursor(self, s: Subpopulation) -> float:
        sigma = max(s.volatility, math.sqrt(self.var_floor))
        return 1.0 / (sigma * math.sqrt(s.size))

    def containing(self, x) -> list:
        """Eligible subpopulations whose level set contains context ``x``."""
        X = stack_contexts(x, self._require_F(len(np.atleast_1d(x))))
        return self._containing_rows(X)[0]

    def _require_F(self, got: int) -> int:
        return self.F if self.F is not None else got

    def _containing_rows(self, X: np.ndarray) -> list:
        hits = [[] for _ in range(X.shape[0])]
        for r, rep in enumerate(self.representations):
            table = self._index.get(r)
            if not table:
                continue
            keys = grid_keys(X, rep.H, self.quantization)
            for i, row in enumerate(map(tuple, keys.tolist())):
                s = table.get(row)
                if s is not None:
                    hits[i].append(s)
        return hits

    def weights(self, x) -> list:
        """``[(subpop, weight), ...]`` for ``x``; weights sum to one."""
        subs = self.containing(x)
        raw = [self.weight_precursor(s) for s in subs]
        total = math.fsum(raw)
        return [(s, w / total) for s, w in zip(subs, raw)]

    def score_contexts(self, X) -> np.ndarray:
        X = stack_contexts(X, self._require_F(np.shape(X)[-1]))
        out = np.zeros(X.shape[0])
        for i, subs in enumerate(self._containing_rows(X)):
            if not subs:
                continue
            raw = [self.weight_precursor(s) for s in subs]
            out[i] = math.fsum(w * s.effect for w, s in zip(raw, subs)) / math.fsum(raw)
        return out

    # --- serialization -------------------------------------------------
    def to_dict(self, config: Optional[dict] = None, seed: Optional[int] = None) -> dict:
        d = {
            "level": self.level,
            "quantization": self.quantization,
            "var_floor": self.var_floor,
            "F": self.F,
            "representations": [
                rep.to_dict(objective=obj, order_index=i, seed=seed or 0)
                for i, (rep, obj) in enumerate(zip(self.representations, self.objectives or [0] * len(self.representations)))
            ],
            "subpops": [s.to_dict() for s in self.subpops],
        }
        if config is not None:
            d["config"] = config
        return d

    def to_json(self, config: Optional[dict] = None, seed: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(config, seed), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EligibleSet":
        q = float(d["quantization"])
        reps = [Representation.from_dict(r) for r in d["representations"]]
        return cls(
            subpops=[Subpopulation.from_dict(s, q) for s in d["subpops"]],
            representations=reps,
            quantization=q,
            level=float(d["level"]),
            var_floor=float(d.get("var_floor", 1e-12)),
            F=d.get("F"),
            objectives=[int(r.get("objective", 0)) for r in d["representations"]],
        )

    @classmethod
    def from_json(cls, text: str) -> "EligibleSet":
        return cls.from_dict(json.loads(text))


def build_model(
    train: ExperimentDataset,
    found: Sequence,
    cfg: EligibilityConfig,
    quantization: float = DEFAULT_QUANTIZATION,
) -> EligibleSet:
    """Enumerate, filter and dedupe the subpopulations of every accepted
    representation. ``found`` holds ``(Representation, objective)`` pairs."""
    reps = [r for r, _ in found]
    candidates = []
    for r, rep in enumerate(reps):
        candidates.extend(filter_eligible(enumerate_subpopulations(rep, train, quantization, r), cfg))
    return EligibleSet(
        subpops=dedupe(candidates),
        representations=reps,
        quantization=quantization,
        level=cfg.level,
        var_floor=cfg.var_floor,
        F=train.F,
        objectives=[o for _, o in found],
    )


def dpv(x, model: EligibleSet) -> float:
    """Derived personal valuation of context ``x`` (0 outside every eligible
    subpopulation)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or (model.F is not None and x.shape[0] != model.F):
        raise DimensionMismatch(f"context of length {x.shape[-1]} does not match F={model.F}")
    return float(model.score_contexts(x[None, :])[0])


def score_dataset(test: ExperimentDataset, model: EligibleSet) -> list:
    if model.F is not None and test.F != model.F:
        raise DimensionMismatch(f"dataset has F={test.F}, model expects F={model.F}")
    scores = model.score_contexts(test.X)
    return list(zip(test.ids, scores.tolist()))


@dataclass(frozen=True)
class GlobalComparison:
    diff: float
    sd: float
    statistic: float
    eligible: bool
    n_T: int
    n_C: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def global_comparison(dataset: ExperimentDataset, cfg: EligibilityConfig) -> GlobalComparison:
    """Whole-population test vs control comparison (no representation)."""
    st = ArmStats.of(dataset.metric[dataset.is_test])
    sc = ArmStats.of(dataset.metric[~dataset.is_test])
    diff = st.mean - sc.mean
    sd = standard_error(st, sc)
    return GlobalComparison(
        diff, sd, statistic_from_difference(diff, sd, cfg.var_floor), is_eligible(st, sc, cfg), st.n, sc.n
    )

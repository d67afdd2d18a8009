"""Held-out validation of DPV-based routing and a planted-effect generator.

The validation protocol: learn the model on the chronologically earlier
split, score the later split using contexts only, cut the scores into
quartile groups and compare test vs control metric inside each group.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import ExperimentDataset
from .errors import ConfigInvalid, DimensionMismatch, TooFewInstances
from .search import SearchConfig, search_all
from .stats import ArmStats, EligibilityConfig, is_eligible, standard_error
from .valuation import DEFAULT_QUANTIZATION, build_model, global_comparison, grid_keys

GROUP_LABELS = ("<Q1", "Q1-Q2", "Q2-Q3", ">Q3")


# --------------------------------------------------------------------------
# synthetic experiments


@dataclass(frozen=True)
class PlantedDirection:
    direction: tuple
    threshold: float
    effect_plus: float
    effect_minus: float

    def to_dict(self) -> dict:
        return {
            "direction": list(self.direction),
            "threshold": self.threshold,
            "effect_plus": self.effect_plus,
            "effect_minus": self.effect_minus,
        }


@dataclass(frozen=True)
class SyntheticConfig:
    n_instances: int = 20_000
    F: int = 10
    test_fraction: float = 0.5
    noise_sd: float = 1.0
    planted_directions: tuple = ()
    baseline_mean: float = 0.0
    feature_level_count: int = 2
    seed: int = 0
    noise_model: str = "gaussian"
    start_ms: int = 1_600_000_000_000
    interval_ms: int = 1000

    def __post_init__(self):
        dirs = tuple(
            d if isinstance(d, PlantedDirection) else PlantedDirection(**d) for d in self.planted_directions
        )
        dirs = tuple(
            PlantedDirection(tuple(float(v) for v in d.direction), float(d.threshold), float(d.effect_plus), float(d.effect_minus))
            for d in dirs
        )
        object.__setattr__(self, "planted_directions", dirs)
        if self.n_instances < 2:
            raise ConfigInvalid("synthetic.n_instances", "must be >= 2")
        if self.F < 1:
            raise ConfigInvalid("synthetic.F", "must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigInvalid("synthetic.test_fraction", "must lie strictly between 0 and 1")
        if self.noise_sd < 0:
            raise ConfigInvalid("synthetic.noise_sd", "must be >= 0")
        if self.feature_level_count < 1:
            raise ConfigInvalid("synthetic.feature_level_count", "must be >= 1")
        if self.noise_model not in ("gaussian", "bernoulli"):
            raise ConfigInvalid("synthetic.noise_model", "must be 'gaussian' or 'bernoulli'")
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid("synthetic.seed", "must be an unsigned 64-bit integer")
        for i, d in enumerate(dirs):
            if len(d.direction) != self.F:
                raise ConfigInvalid(f"synthetic.planted_directions[{i}].direction", f"length must equal F={self.F}")
            if abs(np.linalg.norm(d.direction) - 1.0) > 1e-9:
                raise ConfigInvalid(f"synthetic.planted_directions[{i}].direction", "must be unit-norm")


def true_effects(X: np.ndarray, cfg: SyntheticConfig) -> np.ndarray:
    """Per-context effect: the first direction whose level set ``{h x = v0}``
    contains x contributes its ``effect_plus``; contexts matched by none get
    the first direction's ``effect_minus`` (0 without directions)."""
    dirs = cfg.planted_directions
    if not dirs:
        return np.zeros(X.shape[0])
    eff = np.full(X.shape[0], dirs[0].effect_minus)
    unset = np.ones(X.shape[0], dtype=bool)
    for d in dirs:
        key = grid_keys(X, np.array([d.direction]), DEFAULT_QUANTIZATION)[:, 0]
        hit = unset & (key == np.rint(d.threshold / DEFAULT_QUANTIZATION))
        eff[hit] = d.effect_plus
        unset &= ~hit
    return eff


def generate_synthetic(cfg: SyntheticConfig):
    """Return ``(dataset, ground_truth)`` with ``ground_truth[i]`` the true
    effect of instance ``i``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_instances
    X = rng.integers(0, cfg.feature_level_count, size=(n, cfg.F)).astype(np.float64)
    is_test = rng.random(n) < cfg.test_fraction
    if is_test.all() or not is_test.any():
        raise ConfigInvalid("synthetic.test_fraction", "one arm came out empty; increase n_instances")
    effect = true_effects(X, cfg)
    mean = cfg.baseline_mean + is_test * effect
    if cfg.noise_model == "gaussian":
        y = mean + cfg.noise_sd * rng.standard_normal(n)
    else:
        y = (rng.random(n) < np.clip(mean, 0.0, 1.0)).astype(np.float64)
    width = len(str(n - 1))
    ds = ExperimentDataset(
        ids=tuple(f"i{i:0{width}d}" for i in range(n)),
        timestamps=cfg.start_ms + cfg.interval_ms * np.arange(n, dtype=np.int64),
        is_test=is_test,
        metric=y,
        X=X,
        feature_names=tuple(f"f{j + 1}" for j in range(cfg.F)),
    )
    return ds, effect


# --------------------------------------------------------------------------
# quartile validation


def quartile_cuts(values: Sequence[float]):
    """Q1, Q2, Q3 as the (floor(p*n)+1)-th smallest value."""
    s = sorted(values)
    n = len(s)
    return tuple(s[min(n - 1, math.floor(p * n))] for p in (0.25, 0.5, 0.75))


def quartile_groups(scores: Sequence) -> list:
    """Split ``[(id, dpv), ...]`` into [min,Q1), [Q1,Q2), [Q2,Q3), [Q3,max];
    a score equal to a cut goes to the upper group."""
    if len(scores) < 4:
        raise TooFewInstances(f"need at least 4 scored instances, got {len(scores)}")
    q1, q2, q3 = quartile_cuts([s for _, s in scores])
    groups: list = [[], [], [], []]
    for ident, s in scores:
        g = 0 if s < q1 else 1 if s < q2 else 2 if s < q3 else 3
        groups[g].append(ident)
    return groups


@dataclass(frozen=True)
class IncrementalMetric:
    diff: float
    sd: float
    n: int
    n_T: int
    n_C: int
    significant: bool
    defined: bool


def incremental_metric(group: Sequence[str], test_data: ExperimentDataset, cfg: EligibilityConfig) -> IncrementalMetric:
    members = set(group)
    mask = np.fromiter((i in members for i in test_data.ids), dtype=bool, count=test_data.n)
    y = test_data.metric[mask]
    arm = test_data.is_test[mask]
    st, sc = ArmStats.of(y[arm]), ArmStats.of(y[~arm])
    n = int(mask.sum())
    if st.n == 0 or sc.n == 0:
        return IncrementalMetric(math.nan, math.nan, n, st.n, sc.n, False, False)
    diff = st.mean - sc.mean
    sd = standard_error(st, sc) if st.n >= 2 and sc.n >= 2 else math.nan
    return IncrementalMetric(diff, sd, n, st.n, sc.n, is_eligible(st, sc, cfg), True)


@dataclass
class QuartileReport:
    metric_name: str
    groups: list
    level: float
    model_hash: str = ""
    n_representations: int = 0
    n_eligible: int = 0
    objectives: list = field(default_factory=list)
    train_global: Optional[dict] = None
    test_global: Optional[dict] = None
    config: Optional[dict] = None
    scores: list = field(default_factory=list, repr=False)

    def group(self, label: str) -> dict:
        return next(g for g in self.groups if g["group"] == label)

    def to_dict(self) -> dict:
        d = {
            "metric": self.metric_name,
            "level": self.level,
            "model_hash": self.model_hash,
            "n_representations": self.n_representations,
            "n_eligible_subpops": self.n_eligible,
            "objectives": self.objectives,
            "train_global": self.train_global,
            "test_global": self.test_global,
            "groups": self.groups,
        }
        if self.config is not None:
            d["config"] = self.config
        return d

    def to_text(self, significant_only: bool = False) -> str:
        head = f"{'Metric':<12} {'DPV group':<10} {'Diff':>10} {'SD of diff':>11} {'Size':>7}  sig@{self.level:g}"
        lines = [head, "-" * len(head)]
        for g in self.groups:
            if significant_only and not g["significant"]:
                continue
            lines.append(
                f"{self.metric_name:<12} {g['group']:<10} {_fmt(g['diff']):>10} {_fmt(g['sd']):>11} "
                f"{g['size']:>7}  {'yes' if g['significant'] else 'no'}"
            )
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    return "n/a" if x is None or (isinstance(x, float) and not math.isfinite(x)) else f"{x:.4f}"


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def model_digest(model_json: str) -> str:
    return hashlib.sha256(model_json.encode("utf-8")).hexdigest()


def run_validation(
    train: ExperimentDataset,
    test: ExperimentDataset,
    search_cfg: SearchConfig,
    elig_cfg: EligibilityConfig,
    quantization: float = DEFAULT_QUANTIZATION,
    metric_name: str = "y",
    monitor=None,
    found=None,
) -> QuartileReport:
    """Learn on ``train``, evaluate DPV quartile groups on ``test``."""
    if train.F != test.F:
        raise DimensionMismatch(f"train F={train.F} differs from test F={test.F}")
    if test.n < 4:
        raise TooFewInstances(f"need at least 4 test instances, got {test.n}")
    if found is None:
        found = search_all(train, search_cfg, monitor=monitor)
    model = build_model(train, found, elig_cfg, quantization)
    digest = model_digest(model.to_json(seed=search_cfg.seed))
    # contexts only until the model is frozen
    scores = list(zip(test.ids, model.score_contexts(test.X).tolist()))
    groups = quartile_groups(scores)
    score_of = dict(scores)
    rows = []
    for label, ids in zip(GROUP_LABELS, groups):
        m = incremental_metric(ids, test, elig_cfg)
        rows.append(
            {
                "group": label,
                "size": len(ids),
                "mean_dpv": _finite_or_none(float(np.mean([score_of[i] for i in ids]))) if ids else None,
                "diff": _finite_or_none(m.diff),
                "sd": _finite_or_none(m.sd),
                "n_T": m.n_T,
                "n_C": m.n_C,
                "significant": m.significant,
            }
        )
    return QuartileReport(
        metric_name=metric_name,
        groups=rows,
        level=elig_cfg.level,
        model_hash=digest,
        n_representations=len(found),
        n_eligible=len(model.subpops),
        objectives=[int(o) for _, o in found],
        train_global=global_comparison(train, elig_cfg).to_dict(),
        test_global=global_comparison(test, elig_cfg).to_dict(),
        scores=scores,
    )

"""Two-sample test statistic and the eligibility decision for subpopulations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import ConfigInvalid, DomainError, InsufficientData

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class ArmStats:
    """Count, mean and sample variance (n-1 divisor) of one arm's metric."""

    n: int
    mean: float
    var: float

    @property
    def var_defined(self) -> bool:
        return self.n >= 2

    @classmethod
    def of(cls, values) -> "ArmStats":
        v = np.asarray(values, dtype=np.float64)
        n = v.size
        if n == 0:
            return cls(0, math.nan, math.nan)
        mean = float(v.mean())
        var = float(v.var(ddof=1)) if n >= 2 else math.nan
        return cls(n, mean, var)


@dataclass(frozen=True)
class EligibilityConfig:
    level: float = 0.30
    n_min: int = 10
    var_floor: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ConfigInvalid("eligibility.level", "must lie strictly between 0 and 1")
        if self.n_min < 2:
            raise ConfigInvalid("eligibility.n_min", "must be >= 2")
        if self.var_floor < 0:
            raise ConfigInvalid("eligibility.var_floor", "must be >= 0")

    @property
    def threshold(self) -> float:
        return normal_quantile(1.0 - self.level / 2.0)


def standard_error(test: ArmStats, control: ArmStats) -> float:
    """sqrt(var_T/n_T + var_C/n_C), the volatility of the mean difference."""
    return math.sqrt(test.var / test.n + control.var / control.n)


def statistic_from_difference(diff: float, sd: float, var_floor: float = 1e-12) -> float:
    """|diff| / sd with the zero-denominator convention of :func:`welch_statistic`."""
    if sd < var_floor:
        return 0.0 if diff == 0 else math.inf
    return abs(diff) / sd


def welch_statistic(test: ArmStats, control: ArmStats, var_floor: float = 1e-12) -> float:
    if test.n < 2 or control.n < 2:
        raise InsufficientData("each arm needs at least two observations")
    return statistic_from_difference(
        test.mean - control.mean, standard_error(test, control), var_floor
    )


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, exactly antisymmetric about p = 0.5."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p={p!r} outside (0, 1)")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -_STD_NORMAL.inv_cdf(1.0 - p)
    return _STD_NORMAL.inv_cdf(p)


def is_eligible(test: ArmStats, control: ArmStats, cfg: EligibilityConfig) -> bool:
    if test.n < cfg.n_min or control.n < cfg.n_min:
        return False
    return welch_statistic(test, control, cfg.var_floor) > cfg.threshold

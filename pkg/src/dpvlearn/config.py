"""Single-file JSON run configuration shared by every CLI command."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Mapping

from .data import DiscretizationConfig, Schema
from .errors import ConfigInvalid
from .harness import SyntheticConfig
from .search import SearchConfig
from .stats import EligibilityConfig
from .valuation import DEFAULT_QUANTIZATION

_TOP_KEYS = (
    "seed",
    "train_fraction",
    "quantization",
    "metric_name",
    "schema",
    "discretization",
    "eligibility",
    "search",
    "synthetic",
)


def _section(cls, d, name: str, skip=("seed",)):
    """Build dataclass ``cls`` from mapping ``d``, rejecting unknown keys.

    Seeds live at the top level only, so a section-level ``seed`` is refused
    rather than silently shadowed.
    """
    if d is None:
        d = {}
    if not isinstance(d, Mapping):
        raise ConfigInvalid(name, "must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(skip)
    for key in d:
        if key in skip:
            raise ConfigInvalid(f"{name}.{key}", "set the top-level 'seed' instead")
        if key not in allowed:
            raise ConfigInvalid(f"{name}.{key}", "unknown key")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigInvalid(name, str(exc)) from None


def _section_dict(obj, skip=("seed",)) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = [x.to_dict() if hasattr(x, "to_dict") else x for x in v]
        out[f.name] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train_fraction: float = 0.8
    quantization: float = DEFAULT_QUANTIZATION
    metric_name: str = "y"
    schema: Schema = Schema()
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    eligibility: EligibilityConfig = EligibilityConfig()
    search: SearchConfig = SearchConfig()
    synthetic: SyntheticConfig = SyntheticConfig()

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed", "must be an unsigned 64-bit integer")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigInvalid("train_fraction", "must lie strictly between 0 and 1")
        if not self.quantization > 0:
            raise ConfigInvalid("quantization", "must be > 0")
        # the top-level seed drives every seeded component
        object.__setattr__(self, "search", dataclasses.replace(self.search, seed=self.seed))
        object.__setattr__(self, "synthetic", dataclasses.replace(self.synthetic, seed=self.seed))

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        if not isinstance(d, Mapping):
            raise ConfigInvalid("config", "must be a JSON object")
        for key in d:
            if key not in _TOP_KEYS:
                raise ConfigInvalid(key, "unknown key")
        kw = {k: d[k] for k in ("seed", "train_fraction", "quantization", "metric_name") if k in d}
        if "schema" in d:
            kw["schema"] = Schema.from_dict(d["schema"] or {})
        if "discretization" in d:
            kw["discretization"] = DiscretizationConfig.from_dict(d["discretization"] or {})
        kw["eligibility"] = _section(EligibilityConfig, d.get("eligibility"), "eligibility", skip=())
        kw["search"] = _section(SearchConfig, d.get("search"), "search")
        kw["synthetic"] = _section(SyntheticConfig, d.get("synthetic"), "synthetic")
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("config", f"not valid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "quantization": self.quantization,
            "metric_name": self.metric_name,
            "schema": self.schema.to_dict(),
            "discretization": self.discretization.to_dict(),
            "eligibility": _section_dict(self.eligibility, skip=()),
            "search": _section_dict(self.search),
            "synthetic": _section_dict(self.synthetic),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

"""Discover subpopulations with significant test-vs-control differences in a
randomized experiment and score contexts by their derived personal valuation."""
from .data import (
    DiscretizationConfig,
    ExperimentDataset,
    Instance,
    Schema,
    chronological_split,
    discretize,
    ingest_csv,
    write_csv,
)
from .errors import *  # noqa: F401,F403
from .harness import (
    PlantedDirection,
    QuartileReport,
    SyntheticConfig,
    generate_synthetic,
    incremental_metric,
    quartile_groups,
    run_validation,
)
from .kernels import BACKEND
from .search import (
    PairMatrix,
    Representation,
    SearchConfig,
    build_pair_matrix,
    gram_schmidt,
    objective_value,
    search_all,
    search_next_H,
)
from .stats import ArmStats, EligibilityConfig, is_eligible, normal_quantile, welch_statistic
from .valuation import (
    EligibleSet,
    Subpopulation,
    build_model,
    dedupe,
    dpv,
    enumerate_subpopulations,
    filter_eligible,
    score_dataset,
)

__version__ = "0.1.0"

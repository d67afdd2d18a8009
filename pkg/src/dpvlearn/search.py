"""Greedy Lagrangian search for orthonormal-row representations.

Each representation ``H`` (K x F) partitions the population into level sets
``{H x = v}``. The search maximises the number of test/control pairs that
``H`` collapses (``H (x_t - x_c) = 0``), which is the size-weighted expected
amount of per-subpopulation data, while keeping each new ``H`` out of the row
space of every previously accepted one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .data import ExperimentDataset
from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    EmptyArm,
    InitializationFailed,
    RankDeficient,
    ZeroProjectedGradient,
)

log = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PairMatrix:
    """Differences ``x_test - x_control`` for (sampled) test/control pairs.

    ``Z`` is pair-major with shape ``(n_pairs, F)``: row ``k`` is column ``k``
    of the F x |T||C| pair matrix.
    """

    Z: np.ndarray
    pair_ids: tuple
    sampled: bool
    total_pairs: int

    @property
    def n_pairs(self) -> int:
        return self.Z.shape[0]

    @property
    def F(self) -> int:
        return self.Z.shape[1]

    @property
    def columns(self) -> np.ndarray:
        return self.Z


@dataclass(frozen=True, eq=False)
class Representation:
    H: np.ndarray

    def __post_init__(self):
        H = np.ascontiguousarray(np.atleast_2d(np.asarray(self.H, dtype=np.float64)))
        K, F = H.shape
        if not 1 <= K < F:
            raise DimensionMismatch(f"representation must have 1 <= K < F, got {K}x{F}")
        err = orthonormality_error(H)
        if err > ORTHONORMAL_TOL:
            raise RankDeficient(f"rows are not orthonormal (max |HH^T - I| = {err:.3g})")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def K(self) -> int:
        return self.H.shape[0]

    @property
    def F(self) -> int:
        return self.H.shape[1]

    def to_dict(self, objective: int, order_index: int, seed: int) -> dict:
        return {
            "K": self.K,
            "F": self.F,
            "rows": self.H.ravel().tolist(),
            "objective": int(objective),
            "order_index": int(order_index),
            "seed": int(seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Representation":
        return cls(np.array(d["rows"], dtype=np.float64).reshape(d["K"], d["F"]))


@dataclass(frozen=True)
class SearchConfig:
    K_values: tuple = (1, 2)
    D: float = 0.01
    epsilon: float = 0.05
    theta: float = 0.5
    gamma: float = 1e-6
    mu: float = 0.5
    max_iters: int = 500
    max_matrices: int = 20
    min_objective_fraction: float = 0.05
    pair_cap: int = 200_000
    seed: int = 0
    # plumbing beyond the algorithm's own parameters
    zero_tol: float = 1e-9
    sign_tol: float = 1e-12
    max_restarts: int = 4
    step_rule: str = "polyak"
    polish: bool = True

    def __post_init__(self):
        ks = tuple(int(k) for k in self.K_values)
        object.__setattr__(self, "K_values", ks)
        if not ks or any(k < 1 for k in ks) or list(ks) != sorted(set(ks)):
            raise ConfigInvalid("search.K_values", "must be a non-empty ascending list of positive integers")
        checks = [
            ("D", self.D > 0, "must be > 0"),
            ("epsilon", self.epsilon > 0, "must be > 0"),
            ("theta", 0 < self.theta < 1, "must lie strictly between 0 and 1"),
            ("gamma", self.gamma > 0, "must be > 0"),
            ("max_iters", self.max_iters >= 1, "must be >= 1"),
            ("max_matrices", self.max_matrices >= 1, "must be >= 1"),
            ("min_objective_fraction", 0 < self.min_objective_fraction < 1, "must lie strictly between 0 and 1"),
            ("pair_cap", self.pair_cap >= 1, "must be >= 1"),
            ("seed", 0 <= self.seed < 2**64, "must be an unsigned 64-bit integer"),
            ("zero_tol", self.zero_tol >= 0, "must be >= 0"),
            ("sign_tol", self.sign_tol >= 0, "must be >= 0"),
            ("max_restarts", self.max_restarts >= 1, "must be >= 1"),
            ("step_rule", self.step_rule in ("polyak", "fixed"), "must be 'polyak' or 'fixed'"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigInvalid(f"search.{name}", msg)


@dataclass
class SearchState:
    H_current: np.ndarray
    a: np.ndarray
    priors: list = field(default_factory=list)
    iteration: int = 0
    MAX: float = math.inf


# --------------------------------------------------------------------------
# linear algebra


def orthonormality_error(H: np.ndarray) -> float:
    H = np.atleast_2d(H)
    return float(np.abs(H @ H.T - np.eye(H.shape[0])).max())


def gram_schmidt(M) -> Representation:
    """Classical Gram-Schmidt with one re-orthogonalization pass."""
    return Representation(_orthonormalize(M))


def _orthonormalize(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    Q = np.zeros_like(M)
    for i in range(M.shape[0]):
        v = M[i].copy()
        for _ in range(2):
            v = v - Q[:i].T @ (Q[:i] @ v)
        nrm = float(np.linalg.norm(v))
        if nrm < 1e-10:
            raise RankDeficient(f"row {i} is (numerically) dependent on the rows before it")
        Q[i] = v / nrm
    return Q


def exclusion_margin(H: np.ndarray, prior: np.ndarray) -> float:
    """sum_j H_j (I - P^T P) H_j^T: squared distance of H's rows from R(prior)."""
    return float(np.sum(H * H) - np.sum((H @ prior.T) ** 2))


def projected_step(H, grad, epsilon: float) -> np.ndarray:
    """Move ``H`` by exactly ``epsilon`` (Frobenius) along the gradient
    component orthogonal to its row space."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    G = np.asarray(grad, dtype=np.float64) @ (np.eye(H.shape[1]) - H.T @ H)
    g = float(np.linalg.norm(G))
    if g < 1e-14:
        raise ZeroProjectedGradient("gradient lies in the row space of H")
    return H + epsilon * G / g


def _prior_penalty(H: np.ndarray, priors: Sequence[Representation], mu: float) -> np.ndarray:
    if not priors:
        return np.zeros_like(H)
    F = H.shape[1]
    acc = np.zeros((F, F))
    for p in priors:
        acc += np.eye(F) - p.H.T @ p.H
    # d/dH of mu * sum_j H_j (I - P^T P) H_j^T
    return 2.0 * mu * (H @ acc)


# --------------------------------------------------------------------------
# pair matrix and objective


def build_pair_matrix(train: ExperimentDataset, pair_cap: int, seed: int) -> PairMatrix:
    t_idx = np.flatnonzero(train.is_test)
    c_idx = np.flatnonzero(~train.is_test)
    if t_idx.size == 0 or c_idx.size == 0:
        raise EmptyArm("pair matrix needs both arms")
    nT, nC = t_idx.size, c_idx.size
    total = nT * nC
    if total <= pair_cap:
        flat = np.arange(total, dtype=np.int64)
        sampled = False
    else:
        rng = np.random.default_rng(seed)
        flat = np.sort(rng.choice(total, size=pair_cap, replace=False))
        sampled = True
    ti, ci = flat // nC, flat % nC
    Z = kernels.pair_differences(train.X[t_idx], train.X[c_idx], ti, ci)
    ids = train.ids
    pair_ids = tuple((ids[t_idx[i]], ids[c_idx[j]]) for i, j in zip(ti.tolist(), ci.tolist()))
    return PairMatrix(Z=Z, pair_ids=pair_ids, sampled=sampled, total_pairs=total)


def objective_value(H, Z: PairMatrix, zero_tol: float = 0.0) -> int:
    """Number of pairs with max_i |H_i . z_k| <= zero_tol."""
    H = H.H if isinstance(H, Representation) else np.atleast_2d(H)
    return kernels.count_collapsed(H, Z.Z, zero_tol)


def lagrangian_gradient(state: SearchState, Z: PairMatrix, cfg: SearchConfig) -> np.ndarray:
    """Unprojected dL/dH at the current H, slacks and priors."""
    H = np.atleast_2d(state.H_current)
    if len(state.a) != Z.n_pairs:
        raise DimensionMismatch("slack vector length differs from the number of pairs")
    delta, _, _ = kernels.sign_gradient(H, Z.Z, state.a, cfg.sign_tol)
    return delta + _prior_penalty(H, state.priors, cfg.mu)


def update_slacks(H, Z: PairMatrix, theta: float, max_ref: Optional[float] = None):
    """Return ``(a, MAX)`` with ``a_k = 1`` iff max_i |H_i . z_k| <= theta * MAX.

    ``MAX`` is the largest per-pair magnitude under ``H`` unless ``max_ref``
    supplies the value measured before the last step.
    """
    H = H.H if isinstance(H, Representation) else np.atleast_2d(H)
    mags = kernels.pair_magnitudes(H, Z.Z)
    if max_ref is None:
        max_ref = float(mags.max()) if mags.size else 0.0
    return (mags <= theta * max_ref).astype(np.uint8), float(max_ref)


# --------------------------------------------------------------------------
# initialization and search


def _identity_block(K: int, F: int) -> np.ndarray:
    return np.eye(K, F)


def _clears_priors(H: np.ndarray, priors: Sequence[Representation], D: float) -> bool:
    return all(exclusion_margin(H, p.H) > D for p in priors)


def initial_H(
    n: int,
    priors: Sequence[Representation],
    K: int,
    F: int,
    cfg: SearchConfig,
    Z: PairMatrix,
    attempt: int = 0,
) -> Representation:
    """Starting point for the (n+1)-th search.

    ``n == 0`` gives ``[I_K | 0]`` (restarts perturb it at random). Otherwise
    the last accepted matrix is perturbed along its projected Lagrangian
    gradient (all slacks on); the step doubles until the exclusion margin
    clears every prior.
    """
    if K >= F:
        raise DimensionMismatch(f"K={K} must be smaller than F={F}")
    if (n == 0 or not priors) and attempt == 0:
        return Representation(_identity_block(K, F))
    eps = cfg.epsilon * 4.0**attempt
    last = priors[-1] if priors else None
    if last is not None and last.K == K:
        src = last.H
        state = SearchState(src, np.ones(Z.n_pairs, dtype=np.uint8), list(priors))
        G = lagrangian_gradient(state, Z, cfg) @ (np.eye(F) - src.T @ src)
    else:
        # Shape change, or a restart of the first search: perturb the identity
        # block in a seeded random direction.
        src = _identity_block(K, F)
        rng = np.random.default_rng([cfg.seed, n, attempt])
        G = rng.standard_normal((K, F)) @ (np.eye(F) - src.T @ src)
    g = float(np.linalg.norm(G))
    if g < 1e-14:
        raise InitializationFailed("projected gradient at the last solution is zero")
    for _ in range(11):
        try:
            H = _orthonormalize(src + eps * G / g)
        except RankDeficient:
            H = None
        if H is not None and _clears_priors(H, priors, cfg.D):
            return Representation(H)
        eps *= 2.0
    raise InitializationFailed("no perturbation cleared the exclusion margin")


def enforce_active_constraints(H: np.ndarray, Z: np.ndarray, a: np.ndarray, rel_tol: float = 1e-10):
    """Project H's rows onto the orthogonal complement of the active pairs'
    span, then re-orthonormalize. Returns None when that complement cannot
    hold K independent rows."""
    Za = Z[np.asarray(a, dtype=bool)]
    if Za.shape[0] == 0:
        return H
    w, V = np.linalg.eigh(Za.T @ Za)
    basis = V[:, w > rel_tol * max(float(w.max()), 1.0)]
    if basis.shape[1] == 0:
        return H
    if basis.shape[1] > H.shape[1] - H.shape[0]:
        return None
    try:
        return _orthonormalize(H - (H @ basis) @ basis.T)
    except RankDeficient:
        return None


@dataclass(frozen=True)
class SearchResult:
    representation: Representation
    objective: int
    iterations: int
    attempt: int


Monitor = Callable[[np.ndarray], None]


def _run_attempt(H: np.ndarray, priors, Z: PairMatrix, cfg: SearchConfig, monitor: Optional[Monitor]):
    """One pass of the greedy loop. Returns (H, a, iterations) or None."""
    F = H.shape[1]
    threshold = math.inf
    updated = False
    prior_term = [p for p in priors]
    for it in range(cfg.max_iters):
        if monitor is not None:
            monitor(H)
        # slack update against the previous MAX, then the gradient, in one pass
        a, delta, MAX, resid = kernels.fused_step(H, Z.Z, threshold, cfg.sign_tol)
        if MAX < cfg.gamma:
            return H, a, it
        grad = delta + _prior_penalty(H, prior_term, cfg.mu)
        G = grad @ (np.eye(F) - H.T @ H)
        g = float(np.linalg.norm(G))
        if g < 1e-14:
            if updated:
                return H, a, it
            return None
        step = cfg.epsilon
        if cfg.step_rule == "polyak":
            # constraint residual over |G|: the step that would zero the
            # active residual if the objective were linear
            step = min(step, resid / g)
        try:
            H = _orthonormalize(H + step * G / g)
        except RankDeficient:
            return None
        threshold = cfg.theta * MAX
        updated = True
    return None


def search_next_H(
    priors: Sequence[Representation],
    Z: PairMatrix,
    K: int,
    cfg: SearchConfig,
    monitor: Optional[Monitor] = None,
) -> Optional[SearchResult]:
    """Find the next representation, or ``None`` (not found)."""
    F = Z.F
    if K >= F:
        raise DimensionMismatch(f"K={K} must be smaller than F={F}")
    for attempt in range(cfg.max_restarts):
        try:
            H0 = initial_H(len(priors), priors, K, F, cfg, Z, attempt)
        except InitializationFailed as exc:
            log.debug("K=%d attempt %d: %s", K, attempt, exc)
            return None
        out = _run_attempt(H0.H, priors, Z, cfg, monitor)
        if out is None:
            continue
        H, a, iters = out
        best = objective_value(H, Z, cfg.zero_tol)
        if cfg.polish:
            Hp = enforce_active_constraints(H, Z.Z, a)
            if Hp is not None:
                if monitor is not None:
                    monitor(Hp)
                obj_p = objective_value(Hp, Z, cfg.zero_tol)
                if obj_p >= best:
                    H, best = Hp, obj_p
        if best >= 1 and _clears_priors(H, priors, cfg.D):
            return SearchResult(Representation(H), best, iters, attempt)
        log.debug("K=%d attempt %d rejected (objective %d)", K, attempt, best)
    return None


def search_all(
    train: ExperimentDataset,
    cfg: SearchConfig,
    monitor: Optional[Monitor] = None,
    Z: Optional[PairMatrix] = None,
) -> list:
    """Sweep K over ``cfg.K_values``; returns ``[(Representation, objective), ...]``."""
    if Z is None:
        Z = build_pair_matrix(train, cfg.pair_cap, cfg.seed)
    floor = cfg.min_objective_fraction * Z.n_pairs
    found: list = []
    priors: list = []
    for K in cfg.K_values:
        if K >= Z.F:
            log.info("skipping K=%d: needs K < F=%d", K, Z.F)
            continue
        for _ in range(cfg.max_matrices):
            res = search_next_H(priors, Z, K, cfg, monitor)
            if res is None:
                log.info("K=%d: no further representation", K)
                break
            if res.objective < floor:
                log.info("K=%d: objective %d below floor %.1f", K, res.objective, floor)
                break
            priors.append(res.representation)
            found.append((res.representation, res.objective))
            log.info("K=%d: accepted #%d, objective %d/%d", K, len(found), res.objective, Z.n_pairs)
    return found


def with_seed(cfg: SearchConfig, seed: int) -> SearchConfig:
    return replace(cfg, seed=seed)

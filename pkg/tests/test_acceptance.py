"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the terminal summary.
"""
import csv
import json
import math
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import spearmanr

from conftest import make_dataset
from dpvlearn.cli import main
from dpvlearn.config import RunConfig
from dpvlearn.data import chronological_split, ingest_csv
from dpvlearn.harness import SyntheticConfig, generate_synthetic
from dpvlearn.search import (
    build_pair_matrix,
    gram_schmidt,
    objective_value,
    orthonormality_error,
    search_all,
)
from dpvlearn.stats import EligibilityConfig, is_eligible, normal_quantile
from dpvlearn.valuation import EligibleSet, build_model, enumerate_subpopulations
from oracles import brute_force_expectation, exact_matrix, exact_partition, refines


# --- 1: objective identity ------------------------------------------------------


def _random_orthonormal(rng, F, kind):
    K = int(rng.integers(1, F))
    if kind == "haar":
        Q, R = np.linalg.qr(rng.standard_normal((F, K)))
        return (Q * np.sign(np.diag(R))).T
    if kind == "coords":
        rows = rng.choice(F, size=K, replace=False)
        return np.eye(F)[rows] * rng.choice([-1.0, 1.0], size=(K, 1))
    # 45 degree rotations inside disjoint coordinate planes
    K = int(rng.integers(1, F // 2 + 1))
    perm = rng.permutation(F)
    r = 1 / math.sqrt(2)
    H = np.zeros((K, F))
    for k in range(K):
        a, b = perm[2 * k], perm[2 * k + 1]
        H[k, a], H[k, b] = r, r * rng.choice([-1.0, 1.0])
    return H


def test_criterion_1_objective_identity(criterion):
    start = time.perf_counter()
    kinds = ("haar", "coords", "plane", "coords", "plane")
    failures, checked = 0, 0
    for seed in range(50):
        rng = np.random.default_rng([1, seed])
        F = int(rng.integers(2, 6))
        nT, nC = int(rng.integers(1, 31)), int(rng.integers(1, 31))
        X = rng.integers(0, 3, (nT + nC, F))
        arms = [True] * nT + [False] * nC
        ds = make_dataset(X, arms)
        Z = build_pair_matrix(ds, 10**6, 0)
        assert not Z.sampled
        for kind in kinds:
            H = _random_orthonormal(rng, F, kind)
            assert orthonormality_error(H) <= 1e-12
            got = Fraction(objective_value(H, Z, 0.0), ds.n)
            want = brute_force_expectation(exact_matrix(H), X.tolist(), arms)
            failures += got != want
            checked += 1
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 10
    criterion(1, ok, f"{checked} (dataset, H) cases, {failures} mismatches, {elapsed:.2f}s (< 10s)")
    assert ok


# --- 2: null calibration --------------------------------------------------------


def test_criterion_2_null_calibration(criterion):
    start = time.perf_counter()
    arms = []
    seed = 0
    while len(arms) < 1500:
        rng = np.random.default_rng([2, seed])
        ds, _ = generate_synthetic(SyntheticConfig(n_instances=1000, F=3, seed=seed))
        seed += 1
        j = int(rng.integers(0, 3))
        groups = enumerate_subpopulations(np.eye(3)[[j]], ds)
        g = groups[int(rng.integers(0, len(groups)))]
        if min(g.stats_test.n, g.stats_control.n) >= 200:
            arms.append((g.stats_test, g.stats_control))
    m = len(arms)
    details, ok = [], True
    for level in (0.05, 0.30):
        cfg = EligibilityConfig(level=level)
        rate = sum(is_eligible(t, c, cfg) for t, c in arms) / m
        se = math.sqrt(level * (1 - level) / m)
        ok &= abs(rate - level) <= 3 * se
        details.append(f"l={level}: rate {rate:.4f} (3 SE = {3 * se:.4f})")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    criterion(2, ok, f"{m} subpops; " + "; ".join(details) + f"; {elapsed:.2f}s (< 30s)")
    assert ok


# --- 3 and 4: planted recovery and orthonormality --------------------------------

F10 = 10
PLANT = {"direction": [0.0, 1.0] + [0.0] * (F10 - 2), "threshold": 1.0, "effect_plus": 0.5, "effect_minus": -0.5}


def _planted_config(seed):
    return {
        "seed": seed,
        "search": {"K_values": [1, 2]},
        "synthetic": {"n_instances": 20_000, "F": F10, "noise_sd": 1.0, "planted_directions": [PLANT]},
    }


def _inconclusive_seeds(count=10, limit=60):
    """First seeds whose training split shows no global effect at l = 0.30."""
    q = normal_quantile(1 - 0.30 / 2)
    seeds = []
    for seed in range(limit):
        cfg = RunConfig.from_dict(_planted_config(seed))
        train, _ = chronological_split(generate_synthetic(cfg.synthetic)[0], cfg.train_fraction)
        t, c = train.metric[train.is_test], train.metric[~train.is_test]
        stat = abs(t.mean() - c.mean()) / math.sqrt(t.var(ddof=1) / t.size + c.var(ddof=1) / c.size)
        if stat < q:
            seeds.append(seed)
        if len(seeds) == count:
            break
    return seeds


def _read_csv(path, value=float):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return {r[0]: value(r[1]) for r in rows}


@pytest.fixture(scope="module")
def planted_runs(tmp_path_factory):
    runs = []
    for seed in _inconclusive_seeds():
        d = tmp_path_factory.mktemp(f"planted{seed}")
        cfg_path = d / "cfg.json"
        cfg_path.write_text(json.dumps(_planted_config(seed)))
        start = time.perf_counter()
        codes = [
            main(["simulate", "--config", str(cfg_path), "--out", str(d / "data.csv")]),
            main(["discover", "--config", str(cfg_path), "--input", str(d / "data.csv"), "--out", str(d / "model.json")]),
            main(["score", "--config", str(cfg_path), "--input", str(d / "data.csv"),
                  "--model", str(d / "model.json"), "--out", str(d / "scores.csv")]),
            main(["validate", "--config", str(cfg_path), "--input", str(d / "data.csv"), "--out", str(d / "report.json")]),
        ]
        elapsed = time.perf_counter() - start
        runs.append({"seed": seed, "dir": d, "codes": codes, "elapsed": elapsed})
    return runs


def test_criterion_3_planted_recovery(planted_runs, criterion):
    q = normal_quantile(1 - 0.30 / 2)
    ok_groups, ok_rho, notes = 0, 0, []
    hard_ok = len(planted_runs) == 10
    for run in planted_runs:
        d = run["dir"]
        model = json.loads((d / "model.json").read_text())
        report = json.loads((d / "report.json").read_text())
        hard_ok &= run["codes"] == [0, 0, 0, 0] and len(model["subpops"]) >= 1 and run["elapsed"] < 300
        hard_ok &= abs(report["train_global"]["statistic"]) < q
        # ties in DPV can leave a quartile empty; compare the extreme non-empty groups
        present = [g for g in report["groups"] if g["size"] > 0]
        low, high = present[0], present[-1]
        groups_ok = (
            len(present) >= 2
            and low["diff"] < 0 and low["significant"]
            and high["diff"] > 0 and high["significant"]
        )
        ok_groups += groups_ok
        scores = _read_csv(d / "scores.csv")
        truth = _read_csv(d / "data.truth.csv")
        # ids are zero-padded in time order, so the test split is the tail
        test_ids = sorted(scores)[-report["n_test"]:]
        rho = spearmanr([scores[i] for i in test_ids], [truth[i] for i in test_ids]).statistic
        ok_rho += rho > 0
        notes.append(
            f"seed {run['seed']}: low {low['group']} {low['diff']:+.3f} high {high['group']} {high['diff']:+.3f} "
            f"rho {rho:.3f} {run['elapsed']:.1f}s"
        )
    ok = hard_ok and ok_groups >= 9 and ok_rho >= 9
    seeds = [r["seed"] for r in planted_runs]
    criterion(
        3, ok,
        f"seeds {seeds}: extreme groups {ok_groups}/10, spearman>0 {ok_rho}/10, "
        f"max {max(r['elapsed'] for r in planted_runs):.1f}s per seed (< 300s)",
    )
    print("\n".join(notes))
    assert ok


def test_criterion_4_orthonormality(planted_runs, criterion):
    worst = 0.0
    iterates = 0
    same_reps = True

    def monitor(H):
        nonlocal worst, iterates
        worst = max(worst, orthonormality_error(H))
        iterates += 1

    for run in planted_runs:
        d = run["dir"]
        cfg = RunConfig.from_dict(json.loads((d / "cfg.json").read_text()))
        with open(d / "data.csv", "rb") as fh:
            data = ingest_csv(fh, cfg.schema)
        train, _ = chronological_split(data, cfg.train_fraction)
        Z = build_pair_matrix(train, cfg.search.pair_cap, cfg.seed)
        found = search_all(train, cfg.search, Z=Z, monitor=monitor)
        model = EligibleSet.from_json((d / "model.json").read_text())
        same_reps &= len(found) == len(model.representations) and all(
            np.array_equal(r.H, m.H) for (r, _), m in zip(found, model.representations)
        )
        for rep in model.representations:
            worst = max(worst, orthonormality_error(rep.H))
    ok = worst <= 1e-9 and iterates > 0 and same_reps
    criterion(4, ok, f"{iterates} iterates over {len(planted_runs)} seeds, max |HH^T - I| = {worst:.2e} (<= 1e-9)")
    assert ok


# --- 5: partition propositions ---------------------------------------------------


def _ids(groups):
    return {g.member_ids for g in groups}


def _exact_ids(ds, M, X):
    return {frozenset(ds.ids[i] for i in block) for block in exact_partition(M, X)}


def _full_rank_integer(rng, K, F):
    while True:
        M = rng.integers(-3, 4, (K, F))
        if np.linalg.matrix_rank(M) == K:
            return M


def test_criterion_5_propositions(criterion):
    failures, notes = 0, []
    for seed in range(100):
        rng = np.random.default_rng([5, seed])
        F = int(rng.integers(2, 6))
        n = int(rng.integers(10, 80))
        X = rng.integers(-2, 3, (n, F))
        Xl = X.tolist()
        ds = make_dataset(X, np.arange(n) % 2 == 0)
        K = int(rng.integers(1, F))
        M = _full_rank_integer(rng, K, F)
        truth = _exact_ids(ds, M.tolist(), Xl)

        # orthonormalizing a full-rank matrix keeps its partition
        H = gram_schmidt(M).H
        prop1 = _ids(enumerate_subpopulations(H, ds)) == truth
        # a redundant extra row (a combination of the others) changes nothing
        extra = rng.integers(-2, 3, (1, K)) @ M
        prop1 &= _exact_ids(ds, np.vstack([M, extra]).tolist(), Xl) == truth

        # equal row space, different basis: identical family
        A = _full_rank_integer(rng, K, K)
        H_same = gram_schmidt(A @ M).H
        prop2 = _ids(enumerate_subpopulations(H_same, ds)) == truth
        prop2 &= _exact_ids(ds, (A @ M).tolist(), Xl) == truth
        # strictly contained row space: every coarse group is a union of fine ones
        if K > 1:
            B = _full_rank_integer(rng, K - 1, K)
            coarse = _ids(enumerate_subpopulations(gram_schmidt(B @ M).H, ds))
            prop2 &= coarse == _exact_ids(ds, (B @ M).tolist(), Xl) and refines(truth, coarse)

        if not (prop1 and prop2):
            failures += 1
            notes.append(f"seed {seed}: prop1={prop1} prop2={prop2}")
    ok = failures == 0
    criterion(5, ok, f"100 exact-rational fixtures, {failures} failures" + ("; " + ", ".join(notes) if notes else ""))
    assert ok


# --- 6: DPV contracts -----------------------------------------------------------


def test_criterion_6_dpv_contracts(criterion):
    cfg = RunConfig.from_dict(_planted_config(0))
    data, _ = generate_synthetic(cfg.synthetic)
    train, test = chronological_split(data, cfg.train_fraction)
    found = search_all(train, cfg.search)
    elig = cfg.eligibility
    m1 = build_model(train, found, elig)
    m7 = build_model(train.with_metric(train.metric * 7.0), found, elig)

    worst_sum, inside, outside_ok = 0.0, 0, True
    scores = m1.score_contexts(test.X)
    for x, s in zip(test.X, scores):
        w = m1.weights(x)
        if w:
            inside += 1
            worst_sum = max(worst_sum, abs(math.fsum(v for _, v in w) - 1.0))
        else:
            outside_ok &= s == 0.0
    # binary features never take the value 3, so these contexts sit outside every group
    far = np.full((5, test.F), 3.0)
    outside = sum(not m1.containing(x) for x in far)
    outside_ok &= outside == 5 and not m1.score_contexts(far).any()
    same_elig = [s.member_ids for s in m1.subpops] == [s.member_ids for s in m7.subpops]
    s7 = m7.score_contexts(test.X)
    nz = scores != 0
    rel = float(np.max(np.abs(s7[nz] - 7 * scores[nz]) / np.abs(7 * scores[nz]))) if nz.any() else 0.0
    zero_kept = bool(np.all(s7[~nz] == 0.0))
    ok = m1.subpops and inside > 0 and worst_sum <= 1e-12 and outside_ok and same_elig and rel <= 1e-9 and zero_kept
    criterion(
        6, bool(ok),
        f"{inside} covered test rows, max |sum w - 1| = {worst_sum:.1e}; outside rows zero: {outside_ok}; "
        f"x7 max rel err {rel:.1e}, eligibility unchanged: {same_elig}",
    )
    assert ok


# --- 7: determinism -------------------------------------------------------------

ARTIFACTS = (
    "data.csv", "data.truth.csv", "data.meta.json",
    "model.json", "model.log.json",
    "scores.csv", "scores.meta.json",
    "report.json", "report.txt",
)


def _pipeline(workdir, cfg_text):
    (workdir / "cfg.json").write_text(cfg_text)
    steps = [
        ["simulate", "--config", "cfg.json", "--out", "data.csv"],
        ["discover", "--config", "cfg.json", "--input", "data.csv", "--out", "model.json"],
        ["score", "--config", "cfg.json", "--input", "data.csv", "--model", "model.json", "--out", "scores.csv"],
        ["validate", "--config", "cfg.json", "--input", "data.csv", "--out", "report.json"],
    ]
    codes = [subprocess.run([sys.executable, "-m", "dpvlearn", *s], cwd=workdir).returncode for s in steps]
    return codes, {name: (workdir / name).read_bytes() for name in ARTIFACTS}


def test_criterion_7_determinism(tmp_path, criterion):
    cfg = _planted_config(3)
    cfg["synthetic"]["n_instances"] = 6000
    text = json.dumps(cfg)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    codes_a, a = _pipeline(tmp_path / "a", text)
    codes_b, b = _pipeline(tmp_path / "b", text)
    differ = [name for name in ARTIFACTS if a[name] != b[name]]
    ok = codes_a == codes_b == [0, 0, 0, 0] and not differ
    criterion(7, ok, f"{len(ARTIFACTS)} artifacts compared, differing: {differ or 'none'}; exit codes {codes_a}")
    assert ok

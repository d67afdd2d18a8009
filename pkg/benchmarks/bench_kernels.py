"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--pairs 200000] [--F 10] [--repeat 5]

Prints one line per kernel with the best-of-N time for each backend, then a
full search over a planted synthetic dataset with each backend forced.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dpvlearn import kernels

SEARCH_SNIPPET = """
import time
from dpvlearn import kernels
from dpvlearn.harness import PlantedDirection, SyntheticConfig, generate_synthetic
from dpvlearn.search import SearchConfig, search_all
d = PlantedDirection(tuple([0.0, 1.0] + [0.0] * {F_minus_2}), 1.0, 0.5, -0.5)
ds, _ = generate_synthetic(SyntheticConfig(n_instances={n}, F={F}, planted_directions=(d,), seed=0))
t = time.perf_counter()
found = search_all(ds, SearchConfig(K_values=(1, 2), seed=0))
print(kernels.BACKEND, time.perf_counter() - t, [int(o) for _, o in found])
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(n_pairs, F, repeat):
    rng = np.random.default_rng(0)
    H = np.linalg.qr(rng.standard_normal((F, 2)))[0].T
    Z = rng.integers(-1, 2, size=(n_pairs, F)).astype(np.float64)
    a = (rng.random(n_pairs) < 0.5).astype(np.uint8)
    backends = kernels.available_backends()
    cases = {
        "pair_magnitudes": lambda impl: kernels.pair_magnitudes(H, Z, impl),
        "sign_gradient": lambda impl: kernels.sign_gradient(H, Z, a, 0.0, impl),
        "fused_step": lambda impl: kernels.fused_step(H, Z, 1.0, 0.0, impl),
        "count_collapsed": lambda impl: kernels.count_collapsed(H, Z, 0.0, impl),
    }
    print(f"kernels on {n_pairs} pairs, F={F}, K=2 (best of {repeat})")
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in sorted(backends)) + "     speedup")
    for label, call in cases.items():
        times = {name: best(lambda impl=impl: call(impl), repeat) for name, impl in sorted(backends.items())}
        row = f"{label:<18}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values())
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:>9.2f}x"
        print(row)
    if "cython" not in backends:
        print("compiled extension not built; only the fallback was timed")


def search_table(n, F):
    print(f"\nfull search, {n} instances, F={F}, K in (1, 2)")
    code = SEARCH_SNIPPET.format(n=n, F=F, F_minus_2=F - 2)
    for force in ("0", "1"):
        env = dict(os.environ, DPVLEARN_PURE_PYTHON=force)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs, objectives = out.stdout.split(" ", 2)
        print(f"{backend:<10} {float(secs):8.3f}s  objectives {objectives.strip()}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pairs", type=int, default=200_000)
    p.add_argument("--F", type=int, default=10)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--instances", type=int, default=20_000)
    args = p.parse_args()
    kernel_table(args.pairs, args.F, args.repeat)
    search_table(args.instances, args.F)


if __name__ == "__main__":
    main()

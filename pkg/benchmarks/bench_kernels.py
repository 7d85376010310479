#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

The protocol spends nearly all of its time in three places: divergence
evaluations, the per-part mixing-weight bisection, and full prediction
steps that combine both. This script times each on representative sizes
for both backends and prints the speedup.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import math
import time

import numpy as np

from submix._kernels import _pyfallback

try:
    from submix._kernels import _speedups
except ImportError:
    _speedups = None


def bench(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def divergence_workload(backend, pairs):
    def run():
        for p, q in pairs:
            backend.renyi_divergence(p, q, 2.0)
            backend.sym_renyi_divergence(p, q, 4.0)
            backend.max_divergence(p, q)

    return run


def solver_workload(backend, triples):
    def run():
        for a, b, r in triples:
            backend.solve_mixing_weight(a, b, r, 2.0, 1e-3, True, 1e-6, 40)

    return run


def step_workload(backend, triples):
    # shape of one prediction step for k parts: k bisections plus k
    # leave-one-out symmetric divergences
    def run():
        for a, b, r in triples:
            lam = backend.solve_mixing_weight(a, b, r, 2.0, 1e-3, True, 1e-6, 40)
            mixed = lam * 0.5 * (a + b) + (1.0 - lam) * r
            backend.sym_renyi_divergence(mixed, r, 2.0)

    return run


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--vocab", type=int, default=32)
    parser.add_argument("--n", type=int, default=2000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)

    def pmf():
        x = rng.dirichlet(np.full(args.vocab, 0.7))
        return np.ascontiguousarray(x)

    pairs = [(pmf(), pmf()) for _ in range(args.n)]
    triples = [(pmf(), pmf(), pmf()) for _ in range(args.n // 4)]

    backends = [("python", _pyfallback)]
    if _speedups is not None:
        backends.append(("c", _speedups))
    else:
        print("compiled extension not built; timing the fallback only")

    workloads = [
        (f"divergences x{args.n}", divergence_workload, pairs),
        (f"lambda bisection x{len(triples)}", solver_workload, triples),
        (f"step-shaped mix+charge x{len(triples)}", step_workload, triples),
    ]

    print(f"{'workload':36} " + " ".join(f"{name:>12}" for name, _ in backends) + "  speedup")
    for label, make, data in workloads:
        times = [bench(make(impl, data), args.repeats) for _, impl in backends]
        cells = " ".join(f"{t * 1e3:10.1f}ms" for t in times)
        speedup = f"{times[0] / times[-1]:8.1f}x" if len(times) == 2 else ""
        print(f"{label:36} {cells}{speedup}")


if __name__ == "__main__":
    main()

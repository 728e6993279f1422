"""Compare the compiled and pure-numpy aggregation kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Prints the best-of-``repeat`` time per call for each kernel and backend,
plus one end-to-end simulation per backend.
"""
import argparse
import json
import timeit

import numpy as np

from byzsim import _kernels
from byzsim.aggregators import AggregatorSpec
from byzsim.attacks import AttackSpec
from byzsim.optimizer import OptimizerSpec, Simulation
from byzsim.problems import ProblemSpec, build_problem

SHAPES = [(25, 100), (100, 1000)]


def kernel_cases(X):
    n, d = X.shape
    return {
        "coordinate_median": lambda: _kernels.coordinate_median(X),
        "trimmed_mean": lambda: _kernels.trimmed_mean(X, n // 5),
        "krum_scores": lambda: _kernels.krum_scores(X, n - n // 5 - 2),
        "weiszfeld(3)": lambda: _kernels.weiszfeld(X, 3, 1e-6),
        "centered_clip(5)": lambda: _kernels.centered_clip(X, np.zeros(d), 1.0, 5),
    }


def simulation():
    sim = Simulation(build_problem(ProblemSpec("quadratic", dim=100)), AggregatorSpec("centered-clip", tau=100.0),
                     AttackSpec("alie"), OptimizerSpec("sgdm"), n=25, delta=0.2, rounds=300)
    sim.run(cadence=300)


def best(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()

    backends = _kernels.available_backends()
    rng = np.random.default_rng(0)
    results = []
    for n, d in SHAPES:
        X = rng.standard_normal((n, d))
        for name, fn in kernel_cases(X).items():
            row = {"kernel": name, "shape": f"{n}x{d}"}
            for b in backends:
                _kernels.set_backend(b)
                row[b] = best(fn, args.repeat)
            results.append(row)
    row = {"kernel": "simulation(300 rounds)", "shape": "25x100"}
    for b in backends:
        _kernels.set_backend(b)
        row[b] = best(simulation, max(1, args.repeat // 2))
    results.append(row)
    _kernels.set_backend("auto")

    print(f"{'kernel':24s} {'shape':9s} " + " ".join(f"{b:>12s}" for b in backends) + "      speedup")
    for r in results:
        cells = " ".join(f"{r[b] * 1e6:10.1f}us" for b in backends)
        speed = f"{r['python'] / r['compiled']:8.2f}x" if "compiled" in r else ""
        print(f"{r['kernel']:24s} {r['shape']:9s} {cells} {speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()

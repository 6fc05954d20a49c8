"""Compare the compiled and numpy simplex kernels.

    python benchmarks/bench_simplex.py [--repeat 5]

Times dense random LPs of growing size and the toy aggregate models, and
checks that both kernels reach the same objective.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fairagg.aggregation import AcceptabilityKind, FairnessOperator, build_aggregate_model, solve_independent
from fairagg.instance import paper_toy_instance
from fairagg.milp import SolverOptions, branch_and_bound
from fairagg.milp._kernels import get_kernel
from fairagg.milp.lp import solve_lp


def random_lp(rng, m, n):
    A = rng.uniform(-1, 1, (m, n))
    x0 = rng.uniform(0, 1, n)
    b = A @ x0 + rng.uniform(0, 1, m)
    return rng.uniform(-1, 1, n), A, b


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    kernels = {name: get_kernel(name) for name in ("numba", "numpy")}
    rng = np.random.default_rng(0)
    # compile once outside the timings
    c, A, b = random_lp(rng, 5, 5)
    solve_lp(c, A, -np.ones(5, dtype=np.int64), b, np.zeros(5), np.ones(5), kernel=kernels["numba"])

    print(f"{'case':<28}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for m, n in [(20, 30), (60, 90), (150, 200), (300, 400)]:
        c, A, b = random_lp(rng, m, n)
        sense = -np.ones(m, dtype=np.int64)
        res = {}
        for name, kernel in kernels.items():
            res[name] = best_of(lambda: solve_lp(c, A, sense, b, np.zeros(n), np.ones(n), kernel=kernel), args.repeat)
        assert abs(res["numba"][1].objective - res["numpy"][1].objective) < 1e-7
        print(f"{f'LP {m}x{n}':<28}{res['numba'][0]:>10.4f}{res['numpy'][0]:>10.4f}{res['numpy'][0] / res['numba'][0]:>8.1f}x")

    toy = paper_toy_instance()
    base = solve_independent(toy)
    options = SolverOptions(backend="embedded")
    for op, acc in [
        (FairnessOperator.UTILITARIAN, AcceptabilityKind.none()),
        (FairnessOperator.SCALED_MINIMAX, AcceptabilityKind.progressive()),
    ]:
        model = build_aggregate_model(toy, op, acc, base)
        res = {name: best_of(lambda: branch_and_bound(model, options, kernel=k), args.repeat) for name, k in kernels.items()}
        assert abs(res["numba"][1].objective_value - res["numpy"][1].objective_value) < 1e-7
        label = f"toy B&B {op.value[:11]}/{acc.label[:5]}"
        print(f"{label:<28}{res['numba'][0]:>10.4f}{res['numpy'][0]:>10.4f}{res['numpy'][0] / res['numba'][0]:>8.1f}x")


if __name__ == "__main__":
    main()

"""Time the coordinate-descent and power-meter kernels on both backends.

    python benchmarks/bench_kernels.py [--signals 2000] [--cycles 10000] [--repeat 3]

The first numba call of each kernel is timed separately (compile or cache
load); the table reports the best of ``--repeat`` warm runs.
"""
import argparse
import time

import numpy as np

from powerproxy import _accel, kernels, opm, solver
from powerproxy.model import train
from powerproxy.syngen import default_profile, gen_design, gen_power_labels, gen_workload


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--signals", type=int, default=2000)
    ap.add_argument("--cycles", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    d = gen_design(args.signals, 50, max(1, args.signals // 20), seed=args.seed)
    tm = gen_workload(d, default_profile(args.cycles, seed=100 + args.seed))
    y = gen_power_labels(d, tm, seed=100 + args.seed)
    gram = solver.gram_stats(tm.bits, y)
    lam = 0.05 * solver.lambda_max(gram)
    model, _ = train(tm, y, 50)
    qm = opm.quantize(model, 10)
    q_bits = opm.opm_inputs(qm, tm)
    limits = (1 << qm.cycle_sum_width, 1 << qm.window_acc_width(16))
    w0 = np.zeros(gram.n_features)

    def cd():
        return kernels.cd_gram(gram.xtx, gram.xty, gram.yty, gram.n, w0, kernels.MCP, lam, 10.0,
                               True, 200, 1e-6)

    def meter():
        return kernels.opm_accumulate(qm.q_weights, q_bits, 16, 4, *limits)

    rows = []
    results = {}
    for name in ("numpy", "numba"):
        if name == "numba" and not _accel.HAVE_NUMBA:
            continue
        prev = _accel.set_backend(name)
        try:
            first = {}
            for label, fn in (("cd_gram", cd), ("opm_accumulate", meter)):
                t0 = time.perf_counter()
                results[name, label] = fn()
                first[label] = time.perf_counter() - t0
                rows.append((label, name, first[label], best_of(fn, args.repeat)))
        finally:
            _accel.set_backend(prev)

    print(f"M={args.signals} N={args.cycles} sweeps={results['numpy', 'cd_gram'][1]}")
    print(f"{'kernel':<16}{'backend':<9}{'first [s]':>11}{'best [s]':>11}")
    for label, name, first, best in rows:
        print(f"{label:<16}{name:<9}{first:>11.4f}{best:>11.4f}")
    if ("numba", "cd_gram") in results:
        wa, wb = results["numpy", "cd_gram"][0], results["numba", "cd_gram"][0]
        same = np.array_equal(results["numpy", "opm_accumulate"][0], results["numba", "opm_accumulate"][0])
        print(f"max |w_numpy - w_numba| = {np.max(np.abs(wa - wb)):.2e}; meter outputs equal: {same}")


if __name__ == "__main__":
    main()

"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Each kernel is timed on inputs shaped like the compressed problem
(30 x 30 x 3, seven components), and a short end-to-end solve is timed under
each backend by swapping the active implementation.
"""
import argparse
import time
import timeit

import numpy as np

from ccpd import Ranks, SolverConfig, bcd_solve, kernels
from ccpd.analysis import SyntheticSpec, generate_synthetic


def _cases(rng):
    S, V, T, R = 30, 30, 3, 7
    A, B, C = rng.standard_normal((S, R)), rng.standard_normal((V, R)), rng.standard_normal((T, R))
    X = np.asfortranarray(rng.standard_normal((S, V, T)))
    K, w = 3, 7
    cols = np.array([[0, 1, 2, 3, 4, 5, 6], [0, 1, 7, 8, 9, 10, 0], [0, 1, 11, 12, 13, 14, 0]])
    widths = np.array([7, 6, 6])
    Xv = rng.standard_normal((V, 15))
    M = rng.standard_normal((V, widths.sum()))
    G = np.zeros((K, w, w))
    for k in range(K):
        Q = rng.standard_normal((widths[k], widths[k]))
        G[k, :widths[k], :widths[k]] = Q @ Q.T
    grad = np.empty_like(Xv)
    m, n = 10, Xv.size
    Sh, Yh = rng.standard_normal((m, n)), rng.standard_normal((m, n))
    rho = 1.0 / np.abs(np.einsum("ij,ij->i", Sh, Yh))
    g, out = rng.standard_normal(n), np.empty(n)
    sim = rng.random((7, 7))
    return {
        "khatri_rao": lambda k: k.khatri_rao(C, B),
        "mttkrp": lambda k: k.mttkrp(X, A, B, C, 1),
        "cp_full": lambda k: k.cp_full(A, B, C),
        "coupled_penalized_fg": lambda k: k.coupled_penalized_fg(Xv, M, G, cols, widths, 1e6, grad),
        "lbfgs_direction": lambda k: k.lbfgs_direction(g, Sh, Yh, rho, 3, m, out),
        "linear_assignment": lambda k: k.linear_assignment(sim),
    }


def bench_kernels(impls, repeat):
    cases = _cases(np.random.default_rng(0))
    rows = []
    for name, fn in cases.items():
        row = [name]
        for mod in impls.values():
            t = min(timeit.repeat(lambda: fn(mod), number=repeat, repeat=5)) / repeat
            row.append(t)
        rows.append(row)
    return rows


def bench_solve(impls, n_runs):
    spec = SyntheticSpec(30, 30, [3, 3, 3], 2, [5, 4, 4], noise_snr_db=10.0, seed=0)
    data, _, _ = generate_synthetic(spec)
    config = SolverConfig(Ranks(2, [5, 4, 4]), lam=1e6, max_iters=100, rel_tol=1e-12)
    out = {}
    saved = kernels._impl
    try:
        for name, mod in impls.items():
            kernels._impl = mod
            t0 = time.perf_counter()
            for s in range(n_runs):
                bcd_solve(data, config.__class__(**{**config.__dict__, "seed": s}))
            out[name] = (time.perf_counter() - t0) / n_runs
    finally:
        kernels._impl = saved
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--solves", type=int, default=3)
    args = parser.parse_args()
    impls = kernels.implementations()
    names = list(impls)
    print(f"active backend: {kernels.BACKEND}")
    header = f"{'kernel':<24}" + "".join(f"{n + ' (us)':>16}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for row in bench_kernels(impls, args.repeat):
        line = f"{row[0]:<24}" + "".join(f"{t * 1e6:>16.2f}" for t in row[1:])
        if len(names) == 2:
            line += f"{row[1] / row[2]:>10.2f}"
        print(line)
    solve = bench_solve(impls, args.solves)
    print("\nsolve, 100 outer iterations at 30x30x3, K=3, R=2, L=(5,4,4), lambda=1e6")
    for name, t in solve.items():
        print(f"  {name:<10} {t:8.3f} s per run")


if __name__ == "__main__":
    main()

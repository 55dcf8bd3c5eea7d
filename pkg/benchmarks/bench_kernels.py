"""Time the numba and numpy versions of each likelihood kernel.

    python benchmarks/bench_kernels.py [--repeat 50]

Both twins are called directly, so the env flag does not matter here.
The first numba call (compilation or cache load) is excluded.
"""
import argparse
import time

import numpy as np

from d2dbayes.model import _kernels as K


def _cases(rng):
    T, M = 50, 3
    costs = rng.uniform(10, 30, size=(T, M))
    counts = rng.multinomial(30, [0.1, 0.3, 0.3, 0.3], size=T)
    N = 50
    eta = rng.uniform(0.1, 0.5, N)
    theta = rng.uniform(0.2, 1.5, N)
    rho = rng.uniform(0.05, 0.3, N)
    v1 = np.zeros((N, M))
    choices = rng.integers(0, M + 1, size=(N, T))
    yield "pooled", K.pooled_kernel_nb, K.pooled_kernel_np, (0.3, 0.8, 0.1, np.zeros(M), costs, counts)
    yield "hier_traj", K.hier_traj_kernel_nb, K.hier_traj_kernel_np, (eta, theta, rho, v1, costs, choices)
    yield "hier_counts", K.hier_counts_kernel_nb, K.hier_counts_kernel_np, (eta, theta, rho, v1, costs, counts)


def _time(f, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        f(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    rng = np.random.default_rng(a.seed)
    print(f"{'kernel':<12} {'numba [us]':>11} {'numpy [us]':>11} {'speedup':>8} {'max |diff|':>11}")
    for name, nb, npf, args in _cases(rng):
        r_nb, r_np = nb(*args), npf(*args)
        diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(r_nb, r_np))
        t_nb, t_np = _time(nb, args, a.repeat), _time(npf, args, a.repeat)
        print(f"{name:<12} {t_nb * 1e6:11.1f} {t_np * 1e6:11.1f} {t_np / t_nb:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()

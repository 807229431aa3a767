"""Wall-clock comparison of the numpy and compiled kernels.

    python3 benchmarks/bench_kernels.py --sizes 64 128 --repeat 3
"""
import argparse
import time

import numpy as np

from dnlab import kernels
from dnlab.domain import build_cross_section, diam, make_grid
from dnlab.lab import beam_probe
from dnlab.potentials import Bump, from_bumps
from dnlab.probes import go_boundary_data
from dnlab.solver import solve_ibvp


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_solve(n, repeat):
    cs = build_cross_section({"kind": "rectangle", "width": 1.0, "height": 1.0}, n)
    g = make_grid(cs, 1.5 * diam(cs))
    P = from_bumps(g, [Bump("Phi", (0.1, 0.0), 0.3, 1.0), Bump("A0", (0.0, 0.05), 0.3, 0.3),
                       Bump("A_rot", (0.0, 0.0), 0.3, 0.01)])
    f = go_boundary_data(beam_probe(g, (1.0, 0.0), 10.0), P)
    return g.nt, best_of(lambda: solve_ibvp(P, f), repeat)


def bench_interp(n, repeat, npts=200_000):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    pts = rng.uniform(0, 1, (npts, 2))
    h = 1.0 / (n - 1)
    return best_of(lambda: kernels.interp_cubic(arr, 0.0, 0.0, h, h, pts), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':<10}{'n':>6}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for n in args.sizes:
        for name, fn in (("solve", lambda: bench_solve(n, args.repeat)[1]),
                         ("interp", lambda: bench_interp(n, args.repeat))):
            row = {}
            for b in backends:
                with kernels.use_backend(b):
                    row[b] = fn()
            speed = row["python"] / row["cython"] if "cython" in row else float("nan")
            print(f"{name:<10}{n:>6}" + "".join(f"{row[b]:>11.3f}s" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()

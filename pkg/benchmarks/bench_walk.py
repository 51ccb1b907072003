"""Compare the compiled and numpy walk kernels on the same workload.

    python benchmarks/bench_walk.py [--molecules 4000] [--t-end 2] [--repeat 3]

Both backends consume identical random streams, so the script also checks
that they return the same absorption records.
"""

import argparse
import time

from molmimo import make_topology
from molmimo import particle_sim as ps


def timed(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--molecules", type=int, default=4000)
    ap.add_argument("--t-end", type=float, default=2.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if ps.BACKEND != "cython":
        raise SystemExit("compiled kernel not available; build with `pip install -e .`")
    top = make_topology(2, 2, 4, 50)
    print(f"{'mode':9} {'jumps':>5} {'cython s':>9} {'python s':>9} {'speedup':>8}  same")
    for mode in ("endpoint", "chord", "bridge"):
        for jump in (0.0, 12.0):
            p = ps.SimParams(args.molecules, t_end=args.t_end, seed=1, mode=mode, jump_factor=jump)
            tc, rc = timed(lambda: ps.run_one_shot(top, p, backend="cython"), args.repeat)
            tp, rp = timed(lambda: ps.run_one_shot(top, p, backend="python"), args.repeat)
            print(f"{mode:9} {jump:5g} {tc:9.3f} {tp:9.3f} {tp / tc:8.1f}  {rc == rp}")


if __name__ == "__main__":
    main()

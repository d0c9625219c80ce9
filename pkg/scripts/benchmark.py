"""Fast (Fourier) vs dense-CG X-update timings over a ladder of grid sizes.

The dense path is capped at 64x64. ``--large-point`` additionally times the
fast solver alone at 200x200 with 20 subspace bands.

    python3 scripts/benchmark.py --sizes 8,16,32,64 --ls 8 --large-point
"""

import argparse
import time

import numpy as np

from nlprfuse.cli import cmd_bench
from nlprfuse.frequency import plan, solve_cube
from nlprfuse.grid import Grid
from nlprfuse.linops import BlurFilter, FilterBank


def fast_only(side: int, L_s: int, repeats: int = 5) -> float:
    grid = Grid(side, side)
    bank = FilterBank.from_window(1, 1)
    fp = plan(grid, BlurFilter.starck_murtagh(), bank.filters)
    C = np.random.default_rng(0).standard_normal((side, side, L_s))
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        solve_cube(fp, C)
        times.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="8,16,32,64")
    ap.add_argument("--ls", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--csv", default=None)
    ap.add_argument("--large-point", action="store_true")
    args = ap.parse_args()
    cmd_bench([int(s) for s in args.sizes.split(",")], args.ls, args.csv, args.repeats)
    if args.large_point:
        print(f"200x200 L_s=20 fast X-update: {fast_only(200, 20):.2f} ms (dense path not run)")


if __name__ == "__main__":
    main()

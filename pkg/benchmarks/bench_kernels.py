"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Each kernel runs on the same inputs under both backends; outputs are checked
for bit-identity before timings are reported.
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from dmarl_explore.arena import generate_arena
from dmarl_explore.core import FREE, OCCUPIED
from dmarl_explore.kernels import backends


def workloads():
    arena = generate_arena(50, 0.5, 10, 8, seed=1)
    free = (arena.map.cells == FREE).view(np.uint8)
    occ = (arena.map.cells == OCCUPIED).view(np.uint8)
    r, c = map(int, np.argwhere(free)[0])
    x, y = (c + 0.5) * 0.5, (r + 0.5) * 0.5
    g = np.random.default_rng(0)
    T = 200
    rew, val, nxt = g.standard_normal(T), g.standard_normal(T), g.standard_normal(T)
    done = np.zeros(T)
    done[-1] = 1.0
    return {
        "flood_fill 50x50": lambda k: k.flood_fill_count(free, r, c),
        "raycast 360 rays, 3.5 m": lambda k: k.raycast(occ, x, y, 0.0, 0.5, 3.5, 360),
        "gae T=200": lambda k: k.gae(rew, val, nxt, done, 0.99, 0.95),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="also write the table as CSV")
    args = ap.parse_args(argv)
    found = backends()
    if "compiled" not in found:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    py, cc = found["python"], found["compiled"]
    rows = []
    for name, fn in workloads().items():
        if not same(fn(py), fn(cc)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 2
        number = 3
        t_py = min(timeit.repeat(lambda: fn(py), number=number, repeat=args.repeat)) / number
        number = max(1, int(0.05 / max(t_py / 50, 1e-7)))
        t_cc = min(timeit.repeat(lambda: fn(cc), number=number, repeat=args.repeat)) / number
        rows.append([name, t_py * 1e3, t_cc * 1e3, t_py / t_cc])
    print(f"{'kernel':28s} {'python ms':>11s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, a, b, s in rows:
        print(f"{name:28s} {a:11.3f} {b:12.4f} {s:7.1f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "python_ms", "compiled_ms", "speedup"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())

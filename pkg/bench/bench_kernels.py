"""Compiled kernels against their pure-Python twins.

Checks that both backends agree, then times them:

    python3 bench/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from ambulearn import _kernels_py

try:
    from ambulearn import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    a = np.column_stack([rng.uniform(37.7, 37.8, 200), rng.uniform(-122.5, -122.4, 200)])
    b = np.column_stack([rng.uniform(37.7, 37.8, 50), rng.uniform(-122.5, -122.4, 50)])
    w = {n: rng.normal(size=(n, n)) for n in (8, 32, 96)}
    return a, b, w


def check(a, b, w):
    np.testing.assert_allclose(_kernels.haversine_matrix(a, b), _kernels_py.haversine_matrix(a, b),
                               rtol=1e-12, atol=1e-12)
    for m in w.values():
        c1 = np.asarray(_kernels.max_weight_assignment(m))
        c2 = np.asarray(_kernels_py.max_weight_assignment(m))
        rows = np.arange(len(m))
        assert abs(m[rows, c1].sum() - m[rows, c2].sum()) < 1e-9


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    a, b, w = cases(np.random.default_rng(args.seed))
    backends = [("python", _kernels_py)]
    if _kernels is None:
        print("compiled extension not built; timing the Python fallback only")
    else:
        check(a, b, w)
        backends.append(("compiled", _kernels))
    jobs = [("haversine_matrix 200x50", lambda k: k.haversine_matrix(a, b))]
    jobs += [(f"max_weight_assignment {n}x{n}", (lambda m: lambda k: k.max_weight_assignment(m))(m))
             for n, m in w.items()]
    print(f"{'kernel':32s}" + "".join(f"{name:>12s}" for name, _ in backends) + "     speed-up")
    for label, fn in jobs:
        times = []
        for _, mod in backends:
            n = 3
            t = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n
            times.append(t)
        row = f"{label:32s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:10.1f}x"
        print(row)


if __name__ == "__main__":
    main()

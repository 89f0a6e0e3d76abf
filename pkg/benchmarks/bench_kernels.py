"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--events 200000]

Prints one row per kernel with the best-of-N time for each backend, the
speed-up and the largest difference between the two outputs relative to
the output scale.
"""

import argparse
import sys
import timeit

import numpy as np

from twincal import _kernels


def cases(n_events: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    dt, tau_p = 5e-11, 1e-9
    n = 4_000_000
    times = np.sort(rng.uniform(0, n * dt, n_events))
    charges = rng.gamma(2.0, 0.5, n_events)
    for name in ("superpose_rect", "superpose_exp", "superpose_gauss"):
        yield name, (times, charges, dt, tau_p, n)
    x = rng.normal(size=1_000_000)
    y = 0.5 * x + rng.normal(size=x.size)
    edges = np.linspace(0, x.size, 65).astype(np.int64)
    yield "lagged_block_sums", (x, y, 40, edges)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--events", type=int, default=200_000)
    args = ap.parse_args(argv)

    if _kernels.compiled is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`",
              file=sys.stderr)
        return 1
    print(f"{'kernel':<20}{'numpy [s]':>12}{'cython [s]':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, call in cases(args.events):
        py_fn, c_fn = getattr(_kernels.pure, name), getattr(_kernels.compiled, name)
        t_py = min(timeit.repeat(lambda: py_fn(*call), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: c_fn(*call), number=1, repeat=args.repeat))
        a, b = py_fn(*call), c_fn(*call)
        if isinstance(a, tuple):
            a, b = a[0], b[0]
        a, b = np.asarray(a), np.asarray(b)
        diff = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
        print(f"{name:<20}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>10.1f}{diff:>14.3g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Time the compiled and numpy kernel backends on a dense masked problem.

    python3 benchmarks/bench_kernels.py [--n 500] [--repeat 20]

Prints one line per (kernel, loss, backend) with the best wall time and the
compiled speedup. The logistic rows explain why the dispatcher keeps the
logistic part in numpy.
"""

import argparse
import timeit

import numpy as np

from sfmc import kernels
from sfmc import _kernels_py

LOSSES = {"quadratic": kernels.QUADRATIC, "huber": kernels.HUBER,
          "poisson": kernels.POISSON, "bernoulli": kernels.BERNOULLI}


def _problem(n, seed=0):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, n))
    theta = rng.normal(size=(n, n))
    w = rng.random((n, n)) < 0.6
    x = np.where(w, m + rng.normal(size=(n, n)), np.nan)
    return x, w, m, theta


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    x, w, m, theta = _problem(args.n)
    try:
        compiled = kernels.get_backend("compiled")
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the numpy backend only")
    backends = [("python", _kernels_py)] + ([("compiled", compiled)] if compiled else [])

    print("n=%d repeat=%d" % (args.n, args.repeat))
    for kname in ("loss_value", "loss_terms"):
        for lname, code in LOSSES.items():
            xx = x if code != kernels.POISSON else np.where(w, np.abs(np.round(x)), np.nan)
            times = {}
            for bname, mod in backends:
                fn = getattr(mod, kname)
                times[bname] = _best(lambda: fn(xx, w, m, 1.0, code, 1.345), args.repeat)
            _line(kname, lname, times)
    for kname in ("logistic_value", "logistic_terms"):
        times = {bname: _best(lambda: getattr(mod, kname)(w, theta), args.repeat)
                 for bname, mod in backends}
        _line(kname, "-", times)


def _line(kname, lname, times):
    parts = ["%-15s %-10s" % (kname, lname)]
    parts += ["%s %8.3f ms" % (b, 1e3 * t) for b, t in times.items()]
    if "compiled" in times:
        parts.append("speedup %.2fx" % (times["python"] / times["compiled"]))
    print("  ".join(parts))


if __name__ == "__main__":
    main()

"""Time each hot kernel under every available backend and check the outputs agree.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from windcast._kernels import available_backends
from windcast.gbdt import GbdtParams, fit_boosting


def cases(rng):
    n, d = 20_000, 8
    X = np.ascontiguousarray(rng.normal(size=(n, d)))
    y = X[:, 0] * 2 + np.sin(X[:, 1]) + rng.normal(scale=0.1, size=n)
    sidx = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    go_left = (X[:, 0] <= 0).astype(np.uint8)
    series = rng.normal(size=50_000) * 300
    model = fit_boosting(X[:2000], y[:2000], GbdtParams(num_boost_round=100, max_leaves=31, bagging_fraction=1.0,
                                                        early_stopping_rounds=None))
    forest = model._forest()
    return {
        "best_split (20000x8)": lambda k: k.best_split(X, y, sidx, 20),
        "partition_sorted (20000x8)": lambda k: k.partition_sorted(sidx, go_left),
        "rolling_stats (50000, w=144)": lambda k: k.rolling_stats(series, 144),
        "predict_forest (20000 rows, 100 trees)": lambda k: k.predict_forest(X, *forest),
    }


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = available_backends()
    names = [k.BACKEND for k in backends]
    print(f"{'kernel':40s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup  identical" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = [min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for k in backends]
        row = f"{label:40s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(backends) > 1:
            row += f"{times[0] / times[1]:11.1f}x  {same(fn(backends[0]), fn(backends[1]))}"
        print(row)


if __name__ == "__main__":
    main()

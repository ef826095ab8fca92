"""Time the hot kernels on both backends: compiled (numba) vs pure numpy.

Covers the two inner loops that dominate training and serving: exhaustive
split search over a gradient/hessian matrix, and batch raw-score traversal
of a packed forest.  Run with

    python3 benchmarks/bench_kernels.py [--rows 20000] [--cols 20] [--repeat 5]

Falls back gracefully (numpy rows only) when numba is not installed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from distillforge import _kernels
from distillforge.dataset import SynthSpec, synth_generate
from distillforge.gbdt import GbdtConfig, _pack_forest, fit_hard


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _split_workload(rows: int, cols: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(rows, cols))
    x[rng.random(size=x.shape) < 0.05] = np.nan
    grad = rng.normal(size=rows)
    hess = rng.random(rows) + 0.1
    return x, grad, hess


def _forest_workload(rows: int, cols: int, seed: int = 0):
    spec = SynthSpec(n=max(rows, 200), d=cols, classes=2, seed=seed)
    ds = synth_generate(spec)
    model = fit_hard(ds.features, ds.labels, 2,
                     GbdtConfig(n_trees=100, max_depth=6, val_fraction=0.0))
    packed = _pack_forest(model.trees[: model.best_iteration])
    x = ds.features[:rows]
    return x, packed, model.config.max_depth


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--cols", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"rows={args.rows} cols={args.cols} repeat={args.repeat} "
          f"(best-of timing)")
    print(f"numba available: {_kernels.HAVE_NUMBA}   "
          f"active backend: {'numba' if _kernels.USING_NUMBA else 'numpy'}")
    print()
    print(f"{'kernel':<22}{'backend':<10}{'ms':>10}{'speedup':>10}")

    x, grad, hess = _split_workload(args.rows, args.cols)
    baseline = None
    rows = [("numpy", _kernels.best_split_numpy)]
    if _kernels.HAVE_NUMBA:
        _kernels.best_split_numba(x[:64], grad[:64], hess[:64], 5, 1.0)  # compile
        rows.append(("numba", _kernels.best_split_numba))
    for name, fn in rows:
        sec = _time(lambda: fn(x, grad, hess, 5, 1.0), args.repeat)
        if baseline is None:
            baseline = sec
        print(f"{'split search':<22}{name:<10}{sec * 1e3:>10.2f}{baseline / sec:>9.1f}x")

    fx, packed, depth = _forest_workload(args.rows, args.cols)
    feat, thresh, left, right, value = packed
    baseline = None
    rows = [("numpy", _kernels.forest_raw_numpy)]
    if _kernels.HAVE_NUMBA:
        _kernels.forest_raw_numba(fx[:64], feat, thresh, left, right, value, depth)
        rows.append(("numba", _kernels.forest_raw_numba))
    for name, fn in rows:
        sec = _time(lambda: fn(fx, feat, thresh, left, right, value, depth), args.repeat)
        if baseline is None:
            baseline = sec
        print(f"{'forest traversal':<22}{name:<10}{sec * 1e3:>10.2f}{baseline / sec:>9.1f}x")

    return 0


if __name__ == "__main__":
    raise SystemExit(main())

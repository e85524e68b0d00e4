"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--n 4000] [--repeat 5]

Times one SGD epoch, a batched forward pass and calibration counting on
Covtype-shaped synthetic data, and checks both backends agree.
"""

import argparse
import time

import numpy as np

from icplab import _fallback
from icplab.data import apply_scaler, fit_scaler
from icplab.kernels import available_backends
from icplab.mlp import COVTYPE_LAYERS, init_model
from icplab.synthetic import make_covtype_like


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000, help="training examples per epoch")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    data = make_covtype_like(args.n // 7 + 1, seed=0)
    data = apply_scaler(fit_scaler(data, range(10)), data)
    X = np.ascontiguousarray(data.X[:args.n])
    y = np.ascontiguousarray(data.y[:args.n], dtype=np.int64)
    model = init_model(COVTYPE_LAYERS, np.random.default_rng(0))
    sizes = model._sizes
    order = np.random.default_rng(1).permutation(len(X)).astype(np.int64)
    cal = np.sort(np.random.default_rng(2).uniform(size=5000))
    queries = np.random.default_rng(3).uniform(size=(5000, 7))

    backends = available_backends()
    results = {}
    for b in backends:
        def epoch():
            theta = model.params.copy()
            b.sgd_epoch(theta, sizes, X, y, order, 0.05, 32)
        results[b.NAME] = {
            "sgd epoch": best_of(epoch, args.repeat),
            "forward": best_of(lambda: b.forward_batch(model.params, sizes, X), args.repeat),
            "count_leq": best_of(lambda: b.count_leq(cal, queries), args.repeat),
        }

    if len(backends) > 1:
        theta_c, theta_p = model.params.copy(), model.params.copy()
        backends[0].sgd_epoch(theta_c, sizes, X, y, order, 0.05, 32)
        _fallback.sgd_epoch(theta_p, sizes, X, y, order, 0.05, 32)
        print(f"max |theta difference| after one epoch: {np.max(np.abs(theta_c - theta_p)):.2e}")

    names = [b.NAME for b in backends]
    print(f"{args.n} examples, layers {COVTYPE_LAYERS}, best of {args.repeat}")
    print(f"{'kernel':<12}" + "".join(f"{n:>12}" for n in names)
          + ("     speedup" if len(names) > 1 else ""))
    for op in ("sgd epoch", "forward", "count_leq"):
        row = [results[n][op] for n in names]
        extra = f"{row[-1] / row[0]:>11.2f}x" if len(row) > 1 else ""
        print(f"{op:<12}" + "".join(f"{t * 1e3:>10.2f}ms" for t in row) + extra)


if __name__ == "__main__":
    main()

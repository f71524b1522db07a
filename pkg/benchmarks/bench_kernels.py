"""Throughput comparison of the compiled query kernel vs the numpy fallback.

The oracle query (classifier forward + min-max normalize + tracer forward +
weighted argmax) is the hot inner loop of every decision-based attack; a
full pipeline issues millions of them, so per-call overhead matters.

Usage: python benchmarks/bench_kernels.py [--queries N] [--batch B]
"""

import argparse
import time

import numpy as np

from advtrace._kernels import pyref
from advtrace.netcore import init_dense

try:
    from advtrace._kernels import _core as ext
except ImportError:
    ext = None


def bench(session, x, xs, n_single, n_batches):
    t0 = time.perf_counter()
    for _ in range(n_single):
        session.query(x)
    t1 = time.perf_counter()
    for _ in range(n_batches):
        session.query_batch(xs)
    t2 = time.perf_counter()
    return (t1 - t0) / n_single, (t2 - t1) / (n_batches * len(xs))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--queries", type=int, default=50_000,
                        help="single-query repetitions")
    parser.add_argument("--batch", type=int, default=1000, help="batch size")
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--classes", type=int, default=10)
    args = parser.parse_args()

    clf = init_dense([args.dim, 64, 64, args.classes],
                     ["relu", "relu", "identity"], seed=1)
    trc = init_dense([args.dim, 64, 64, args.classes],
                     ["relu", "relu", "tanh"], seed=2)
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.uniform(0, 1, args.dim))
    xs = rng.uniform(0, 1, (args.batch, args.dim))

    backends = [("python", pyref)]
    if ext is not None:
        backends.insert(0, ("ext", ext))
    else:
        print("compiled extension not available; benchmarking fallback only")

    results = {}
    for name, mod in backends:
        session = mod.make_session(*clf.packed(), *trc.packed(), 0.15)
        single, batch = bench(session, x, xs, args.queries, 200)
        results[name] = (single, batch)
        print(f"{name:>7}: single query {single * 1e6:8.2f} us   "
              f"batched query {batch * 1e6:8.2f} us")

    if "ext" in results:
        s_ratio = results["python"][0] / results["ext"][0]
        b_ratio = results["python"][1] / results["ext"][1]
        print(f"speedup: single x{s_ratio:.1f}, batched x{b_ratio:.1f}")

        se = ext.make_session(*clf.packed(), *trc.packed(), 0.15)
        sp = pyref.make_session(*clf.packed(), *trc.packed(), 0.15)
        agree = (se.query_batch(xs) == sp.query_batch(xs)).all()
        print(f"decision parity on {args.batch} inputs: {bool(agree)}")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each kernel is run on both backends with identical inputs; the outputs are
checked for agreement before timings are reported.
"""
import argparse
import time

import numpy as np

from lsqgap import kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases():
    g = np.random.default_rng(0)
    u = g.random((200_000, 7))
    yield "floyd_supports m=200k k=7 d=49", lambda be: kernels.floyd_supports(u, 49, be)
    s = kernels.floyd_supports(u, 49, "python")
    yield "support_cooccurrence m=200k k=7 d=49", lambda be: kernels.support_cooccurrence(s, 49, be)
    X = g.uniform(-1, 1, (4000, 16)) / 4
    y = g.uniform(-1, 1, 4000)
    yield "vaw_online n=4000 d=16", lambda be: kernels.vaw_online_predictions(X, y, 4.0, be)
    Q = np.zeros((1820, 16))
    for i, S in enumerate(kernels.floyd_supports(g.random((1820, 4)), 16, "python")):
        Q[i, S] = 0.5
    yield "vaw_prefix_average n=4000 sparse Q=1820", lambda be: kernels.vaw_prefix_average(X, y, 4.0, Q, be)
    Qd = g.uniform(-1, 1, (200, 16))
    yield "vaw_prefix_average n=4000 dense Q=200", lambda be: kernels.vaw_prefix_average(X, y, 4.0, Qd, be)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"selected backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    print(f"{'kernel':<42}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases():
        times, outs = [], []
        for be in backends:
            t, out = _time(lambda: fn(be), args.repeat)
            times.append(t)
            outs.append(out)
        for out in outs[1:]:
            np.testing.assert_allclose(out, outs[0], rtol=1e-9, atol=1e-12)
        row = f"{name:<42}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[1] / times[0]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

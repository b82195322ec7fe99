"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Each workload runs once to warm up (JIT compile), then ``repeat`` times;
the median wall time is reported together with the largest absolute gap
between the two outputs.
"""
import argparse
import csv
import statistics
import sys
import time

import numpy as np

from pupilnet import kernels
from pupilnet._accel import HAVE_NUMBA
from pupilnet.presets import PRESETS


def _median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _gap(a, b):
    if isinstance(a, tuple):
        return max(_gap(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def workloads(rng):
    """(name, numba call, numpy call) triples at realistic sizes."""
    out = []
    for preset, batch in (("C_K8P8", 500), ("F_K8P8", 20), ("S_K8P8", 500)):
        cfg = PRESETS[preset]
        n, k, F = cfg.input_size, cfg.kernel_size, cfg.num_filters
        w, s = cfg.pool_window, cfg.pool_stride
        X = rng.random((batch, n, n))
        K = rng.uniform(-0.3, 0.3, (F, k, k))
        b = rng.uniform(-0.1, 0.1, F)
        A, P = kernels.conv_layer_forward_np(X, K, b, w, s)
        dP = rng.standard_normal(P.shape)
        out.append((f"{preset} forward, batch {batch}",
                    lambda X=X, K=K, b=b, w=w, s=s: kernels.conv_layer_forward_nb(X, K, b, w, s),
                    lambda X=X, K=K, b=b, w=w, s=s: kernels.conv_layer_forward_np(X, K, b, w, s)))
        out.append((f"{preset} backward, batch {batch}",
                    lambda X=X, A=A, dP=dP, w=w, s=s, k=k:
                        kernels.conv_layer_backward_nb(X, A, dP, w, s, k),
                    lambda X=X, A=A, dP=dP, w=w, s=s, k=k:
                        kernels.conv_layer_backward_np(X, A, dP, w, s, k)))
    # whole-frame convolution used by window scoring
    for label, shape, k in (("coarse frame 96x72", (1, 72, 96), 5),
                            ("fine region 109x109", (1, 109, 109), 20)):
        X = rng.random(shape)
        K = rng.uniform(-0.3, 0.3, (8, k, k))
        b = np.zeros(8)
        out.append((label,
                    lambda X=X, K=K, b=b: kernels.conv_forward_nb(X, K, b),
                    lambda X=X, K=K, b=b: kernels.conv_forward_np(X, K, b)))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1

    rows = []
    print(f"{'workload':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max gap':>9s}")
    for name, fast, slow in workloads(np.random.default_rng(args.seed)):
        t_nb = _median_time(fast, args.repeat)
        t_np = _median_time(slow, args.repeat)
        gap = _gap(fast(), slow())
        rows.append((name, t_nb * 1e3, t_np * 1e3, t_np / t_nb, gap))
        print(f"{name:34s} {t_nb * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_nb:8.2f} {gap:9.1e}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["workload", "numba_ms", "numpy_ms", "speedup", "max_abs_gap"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Benchmark the compiled extension against the pure-numpy fallback.

Times the three numeric hot paths (cross distances, pairwise distances,
kernel sums) and the checksum on both backends, verifying along the way that
they agree on every output. Run from the repository root:

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --rows 2000 --channels 64 --repeats 7
"""

import argparse
import timeit

import numpy as np

from kde_ood import _kernels_py

try:
    from kde_ood import _kernels
except ImportError:
    _kernels = None


def _best_time(fn, repeats: int) -> float:
    """Best-of-N wall time for one call, in seconds."""
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def _check_agreement(name: str, compiled, fallback) -> None:
    compiled = np.asarray(compiled, dtype=np.float64)
    fallback = np.asarray(fallback, dtype=np.float64)
    if name.startswith("kernel_sums"):
        # exp() may differ in the last ulp between libm and numpy
        ok = np.allclose(compiled, fallback, rtol=1e-12, atol=0.0)
    else:
        ok = np.array_equal(compiled, fallback)
    if not ok:
        raise AssertionError(f"backend mismatch in {name}")


def run(rows: int, refs: int, channels: int, repeats: int) -> list:
    rng = np.random.default_rng(42)
    x = rng.normal(size=(rows, channels))
    ref = rng.normal(size=(refs, channels))
    sigmas = rng.uniform(0.5, 2.0, size=refs)
    blob = rng.bytes(1 << 20)

    dists = _kernels_py.cross_distances(x, ref, _kernels_py.METRIC_L1)
    exclude = np.full(rows, -1, dtype=np.int64)

    cases = [
        ("cross_distances l1",
         lambda m: m.cross_distances(x, ref, _kernels_py.METRIC_L1)),
        ("cross_distances l2",
         lambda m: m.cross_distances(x, ref, _kernels_py.METRIC_L2)),
        ("pairwise_distances l1",
         lambda m: m.pairwise_distances(ref, _kernels_py.METRIC_L1)),
        ("kernel_sums",
         lambda m: m.kde_kernel_sums(dists, sigmas, exclude)),
        ("fnv1a64 (1 MiB)", lambda m: m.fnv1a64(blob)),
    ]

    results = []
    for name, call in cases:
        t_py = _best_time(lambda: call(_kernels_py), repeats)
        if _kernels is not None:
            _check_agreement(name, call(_kernels), call(_kernels_py))
            t_c = _best_time(lambda: call(_kernels), repeats)
        else:
            t_c = float("nan")
        results.append((name, t_c, t_py))
    return results


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=1000,
                        help="query rows (default 1000)")
    parser.add_argument("--refs", type=int, default=1000,
                        help="reference rows (default 1000)")
    parser.add_argument("--channels", type=int, default=32,
                        help="feature channels (default 32)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats, best is kept (default 5)")
    args = parser.parse_args()

    if _kernels is None:
        print("compiled extension not available; timing the fallback only\n")
    print(f"rows={args.rows} refs={args.refs} channels={args.channels} "
          f"(best of {args.repeats})\n")
    print(f"{'kernel':<24}{'compiled':>12}{'python':>12}{'speedup':>10}")
    for name, t_c, t_py in run(args.rows, args.refs, args.channels,
                               args.repeats):
        speedup = f"{t_py / t_c:9.1f}x" if t_c == t_c else "       n/a"
        t_c_text = f"{t_c * 1e3:10.2f}ms" if t_c == t_c else "       n/a"
        print(f"{name:<24}{t_c_text:>12}{t_py * 1e3:10.2f}ms{speedup:>10}")


if __name__ == "__main__":
    main()

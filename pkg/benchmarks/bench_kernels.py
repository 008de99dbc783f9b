"""Timing comparison of the accelerated kernels against their numpy twins.

Run as a script:

    python3 benchmarks/bench_kernels.py [--runs 5]

The two hot paths are the regime-switched latent rollout and the
exhaustive label-assignment scan. Each is timed on desk-scale and on a
deliberately heavier shape, numba first (after one untimed warmup call so
compilation is not billed), then the numpy fallback on identical inputs.
Outputs agree to float tolerance; the script asserts that before printing
timings.
"""

import argparse
import time

import numpy as np

from ctrlns import _kernels


def _rollout_inputs(rng, B, T, U, n, H):
    return dict(
        z0=rng.normal(size=(B, n)),
        domains=rng.integers(0, U, size=(B, T)),
        W1=rng.normal(size=(U, n, n, H)) / np.sqrt(H),
        b1=rng.normal(size=(U, n, H)) * 0.1,
        W2=rng.normal(size=(U, n, H)) / np.sqrt(H),
        b2=rng.normal(size=(U, n)) * 0.1,
        lo=np.full((U, n, n), -2.0),
        hi=np.full((U, n, n), 2.0),
        noise=rng.normal(size=(B, T, n)) * 0.1,
    )


def _scan_inputs(rng, C, L, n):
    masks = []
    for _ in range(C):
        m = (rng.uniform(size=(n, n)) < 0.4).astype(np.uint64).ravel()
        masks.append(np.uint64(sum(int(b) << k for k, b in enumerate(m))))
    probs = rng.dirichlet(np.ones(C))
    return np.array(masks, dtype=np.uint64), probs, L


def _time(fn, runs):
    best = np.inf
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rollout(runs):
    rng = np.random.default_rng(0)
    cases = [
        ("rollout desk  (B=8000, T=15, n=4)", _rollout_inputs(rng, 8000, 15, 3, 4, 16)),
        ("rollout heavy (B=4000, T=60, n=8)", _rollout_inputs(rng, 4000, 60, 5, 8, 16)),
    ]
    rows = []
    for name, kw in cases:
        args = tuple(kw.values())
        ref = _kernels._rollout_numpy(*_as_contig(args))
        if _kernels.HAS_NUMBA:
            fast = _kernels._rollout_numba(*_as_contig(args))  # warmup + check
            np.testing.assert_allclose(fast, ref, rtol=1e-12, atol=1e-12)
            t_numba = _time(lambda: _kernels._rollout_numba(*_as_contig(args)), runs)
        else:
            t_numba = None
        t_numpy = _time(lambda: _kernels._rollout_numpy(*_as_contig(args)), runs)
        rows.append((name, t_numba, t_numpy))
    return rows


def bench_scan(runs):
    rng = np.random.default_rng(1)
    cases = [
        ("scan desk  (C=3, L=3)", _scan_inputs(rng, 3, 3, 4)),
        ("scan heavy (C=8, L=4)", _scan_inputs(rng, 8, 4, 6)),
    ]
    rows = []
    for name, (masks, probs, L) in cases:
        ref = _kernels._scan_numpy(masks, probs, L)
        if _kernels.HAS_NUMBA:
            fast = _kernels._scan_numba(masks, probs, L)  # warmup + check
            np.testing.assert_allclose(fast, ref, rtol=0, atol=1e-12)
            t_numba = _time(lambda: _kernels._scan_numba(masks, probs, L), runs)
        else:
            t_numba = None
        t_numpy = _time(lambda: _kernels._scan_numpy(masks, probs, L), runs)
        rows.append((name, t_numba, t_numpy))
    return rows


def _as_contig(args):
    casts = [np.float64, np.int64] + [np.float64] * 7
    return tuple(np.ascontiguousarray(a, dtype=d) for a, d in zip(args, casts))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=5,
                        help="timed repetitions per case (best is reported)")
    args = parser.parse_args()

    print(f"backend selection would pick: {_kernels.active_backend()}")
    if not _kernels.HAS_NUMBA:
        print("numba unavailable; only the numpy path is timed")

    rows = bench_rollout(args.runs) + bench_scan(args.runs)
    width = max(len(r[0]) for r in rows)
    header = f"{'case':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, t_numba, t_numpy in rows:
        if t_numba is None:
            print(f"{name:<{width}}  {'-':>10}  {t_numpy:>9.4f}s  {'-':>8}")
        else:
            print(f"{name:<{width}}  {t_numba:>9.4f}s  {t_numpy:>9.4f}s  "
                  f"{t_numpy / t_numba:>7.1f}x")


if __name__ == "__main__":
    main()

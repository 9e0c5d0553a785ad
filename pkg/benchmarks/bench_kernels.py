"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Numba timings exclude the first (compiling) call.
"""
import argparse
import json
import time

import numpy as np

from dualvc import _accel, kernels


def _segments(rng, n, span):
    cuts = np.sort(rng.uniform(0, span, 2 * n))
    return cuts[0::2], cuts[1::2]


def workloads(seed=0):
    rng = np.random.default_rng(seed)
    path = rng.integers(0, 6, 20000)
    energies = rng.normal(-40, 10, 6000)
    target = (energies > -35).astype(np.int64)
    offsets = np.array([0, 2000, 4000, 6000])
    thresholds = np.linspace(-70, -10, 61)
    a = tuple(rng.integers(0, 53, 300))
    b = tuple(rng.integers(0, 53, 280))
    logp = np.log(rng.dirichlet(np.ones(54), size=400))
    labels = rng.integers(0, 53, 60)
    ref = [_segments(rng, 200, 600.0) for _ in range(2)]
    hyp = [_segments(rng, 200, 600.0) for _ in range(2)]
    excl = _segments(rng, 150, 600.0)
    return {
        "mode_filter (20k frames, w=11)": lambda: kernels.mode_filter(path, 11, 6),
        "threshold_agreement (6k frames x 61 thr)": lambda: kernels.threshold_agreement(
            energies, offsets, target, thresholds, 11),
        "levenshtein (300 x 280)": lambda: kernels.levenshtein(a, b),
        "greedy_collapse (20k frames)": lambda: kernels.greedy_collapse(path, 5),
        "ctc_nll (T=400, L=60, V=54)": lambda: kernels.ctc_nll(logp, labels, 53),
        "der_sweep (2 spk x 200 segs)": lambda: kernels.der_sweep(ref, hyp, excl),
    }


def bench(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])
    rows = {}
    for name in backends:
        _accel.set_backend(name)
        for label, fn in workloads().items():
            fn()  # warm-up, triggers compilation
            rows.setdefault(label, {})[name] = bench(fn, args.repeat)
    _accel.set_backend("numba" if _accel.HAS_NUMBA else "numpy")

    print(f"{'kernel':44s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, t in rows.items():
        nb = t.get("numba")
        speed = f"{t['numpy'] / nb:7.1f}x" if nb else "      -"
        nb_ms = f"{1e3 * nb:10.3f}" if nb else f"{'-':>10s}"
        print(f"{label:44s} {1e3 * t['numpy']:10.3f} {nb_ms} {speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()

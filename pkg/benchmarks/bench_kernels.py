"""Time the numba segment kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--edges 20000] [--nodes 2000] [--width 64] [--repeat 20]

Edge counts default to roughly one training batch at the default window.
"""
import argparse
import timeit

import numpy as np

from graphcfc import kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--edges", type=int, default=20000)
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(args.seed)
    ids = np.sort(rng.integers(0, args.nodes, args.edges))
    scores = rng.normal(size=args.edges)
    grad = rng.normal(size=args.edges)
    values = rng.normal(size=(args.edges, args.width))
    alpha = kernels.segment_softmax_numpy(scores, ids, args.nodes)

    cases = {
        "segment_sum (E, d)": (kernels.segment_sum_numpy, kernels.segment_sum_numba, (values, ids, args.nodes)),
        "segment_softmax": (kernels.segment_softmax_numpy, kernels.segment_softmax_numba, (scores, ids, args.nodes)),
        "segment_softmax_backward": (kernels.segment_softmax_backward_numpy,
                                     kernels.segment_softmax_backward_numba, (alpha, grad, ids, args.nodes)),
    }
    print(f"E={args.edges} N={args.nodes} d={args.width} repeat={args.repeat}")
    print(f"{'kernel':<26} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, (np_fn, nb_fn, fn_args) in cases.items():
        nb_fn(*fn_args)  # compile outside the timed region
        diff = float(np.max(np.abs(np_fn(*fn_args) - nb_fn(*fn_args))))
        t_np = min(timeit.repeat(lambda: np_fn(*fn_args), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: nb_fn(*fn_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
